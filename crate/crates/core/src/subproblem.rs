//! The convex per-iteration subproblem `min Q_k(x) + λ Σ w_i |x_i|`.
//!
//! Every local model is written relative to its anchor `x^k`, so that
//! `Q_k(x) = ∇f(x^k)ᵀd + ½ dᵀ B d` with `d = x − x^k` and `Q_k(x^k) = 0`.
//! The curvature `B` is `β I` for the proximal model, a positive diagonal for
//! the diagonal quasi-Newton model, or a symmetric positive-definite matrix
//! (plus an optional multiple of the identity) for the dense model.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::reweighting::WeightVector;

/// Default optimality tolerance for the coordinate-descent path.
pub const DEFAULT_SUBPROBLEM_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000;

/// `sign(z) · max(|z| − t, 0)`, returning an exact `0.0` when `|z| ≤ t`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Closed-form minimizer of `½‖x − z‖² + Σ t_i |x_i|`.
pub fn prox_weighted_l1(z: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
    assert_eq!(z.len(), t.len(), "prox input and threshold dimensions differ");
    z.zip_map(t, soft_threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    ProximalFirstOrder { beta: f64 },
    DiagonalQuasiNewton { diag: DVector<f64> },
    /// Curvature `hessian + shift · I`.
    DenseQuadratic { hessian: Arc<DMatrix<f64>>, shift: f64 },
}

impl ModelKind {
    pub fn proximal(beta: f64) -> Result<Self> {
        let kind = ModelKind::ProximalFirstOrder { beta };
        kind.validate(None)?;
        Ok(kind)
    }

    pub fn diagonal(diag: DVector<f64>) -> Result<Self> {
        let kind = ModelKind::DiagonalQuasiNewton { diag };
        kind.validate(None)?;
        Ok(kind)
    }

    /// Checks symmetry and positive definiteness (via Cholesky) once up front.
    pub fn dense(hessian: DMatrix<f64>) -> Result<Self> {
        let kind = ModelKind::DenseQuadratic { hessian: Arc::new(hessian), shift: 0.0 };
        kind.validate(None)?;
        Ok(kind)
    }

    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        let check_dim = |got: usize| match dim {
            Some(expected) if expected != got => Err(Error::DimensionMismatch { expected, got }),
            _ => Ok(()),
        };
        match self {
            ModelKind::ProximalFirstOrder { beta } => {
                if !(*beta > 0.0) || !beta.is_finite() {
                    return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
                }
            }
            ModelKind::DiagonalQuasiNewton { diag } => {
                check_dim(diag.len())?;
                if let Some(d) = diag.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "diagonal curvature must be positive, got {d}"
                    )));
                }
            }
            ModelKind::DenseQuadratic { hessian, shift } => {
                if !hessian.is_square() {
                    return Err(Error::InvalidParameter("dense model matrix must be square".into()));
                }
                check_dim(hessian.nrows())?;
                if !(*shift >= 0.0) {
                    return Err(Error::InvalidParameter(format!("shift must be nonnegative, got {shift}")));
                }
                let scale = hessian.amax().max(1.0);
                if (&**hessian - hessian.transpose()).amax() > 1e-12 * scale {
                    return Err(Error::InvalidParameter("dense model matrix must be symmetric".into()));
                }
                let mut shifted = (**hessian).clone();
                for i in 0..shifted.nrows() {
                    shifted[(i, i)] += shift;
                }
                if shifted.cholesky().is_none() {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        Ok(())
    }

    /// Eigenvalue bounds `(M, L)` of the model curvature.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        match self {
            ModelKind::ProximalFirstOrder { beta } => (*beta, *beta),
            ModelKind::DiagonalQuasiNewton { diag } => (diag.min(), diag.max()),
            ModelKind::DenseQuadratic { hessian, shift } => {
                let eig = SymmetricEigen::new((**hessian).clone());
                (eig.eigenvalues.min() + shift, eig.eigenvalues.max() + shift)
            }
        }
    }

    /// Adds `Γ I` to the curvature.
    pub fn shifted(&self, gamma: f64) -> Self {
        match self {
            ModelKind::ProximalFirstOrder { beta } => ModelKind::ProximalFirstOrder { beta: beta + gamma },
            ModelKind::DiagonalQuasiNewton { diag } => {
                ModelKind::DiagonalQuasiNewton { diag: diag.add_scalar(gamma) }
            }
            ModelKind::DenseQuadratic { hessian, shift } => {
                ModelKind::DenseQuadratic { hessian: Arc::clone(hessian), shift: shift + gamma }
            }
        }
    }

    fn quadratic_form(&self, d: &DVector<f64>) -> f64 {
        match self {
            ModelKind::ProximalFirstOrder { beta } => beta * d.norm_squared(),
            ModelKind::DiagonalQuasiNewton { diag } => {
                diag.iter().zip(d.iter()).map(|(c, di)| c * di * di).sum()
            }
            ModelKind::DenseQuadratic { hessian, shift } => {
                d.dot(&(&**hessian * d)) + shift * d.norm_squared()
            }
        }
    }

    fn apply(&self, d: &DVector<f64>) -> DVector<f64> {
        match self {
            ModelKind::ProximalFirstOrder { beta } => d * *beta,
            ModelKind::DiagonalQuasiNewton { diag } => diag.component_mul(d),
            ModelKind::DenseQuadratic { hessian, shift } => &**hessian * d + d * *shift,
        }
    }
}

/// A local model `Q_k` anchored at `x^k` with `∇Q_k(x^k) = ∇f(x^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    kind: ModelKind,
    anchor: DVector<f64>,
    anchor_gradient: DVector<f64>,
}

impl LocalModel {
    pub fn new(kind: ModelKind, anchor: DVector<f64>, anchor_gradient: DVector<f64>) -> Result<Self> {
        if anchor.len() != anchor_gradient.len() {
            return Err(Error::DimensionMismatch { expected: anchor.len(), got: anchor_gradient.len() });
        }
        kind.validate(Some(anchor.len()))?;
        Ok(Self { kind, anchor, anchor_gradient })
    }

    /// Skips the (possibly expensive) validation of `kind`; the caller has
    /// already validated it for this dimension.
    pub(crate) fn from_validated(kind: ModelKind, anchor: DVector<f64>, anchor_gradient: DVector<f64>) -> Self {
        debug_assert_eq!(anchor.len(), anchor_gradient.len());
        Self { kind, anchor, anchor_gradient }
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn anchor_gradient(&self) -> &DVector<f64> {
        &self.anchor_gradient
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// `Q_k(x)`, with `Q_k(anchor) = 0`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.anchor;
        self.anchor_gradient.dot(&d) + 0.5 * self.kind.quadratic_form(&d)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x - &self.anchor;
        &self.anchor_gradient + self.kind.apply(&d)
    }

    pub fn curvature_bounds(&self) -> (f64, f64) {
        self.kind.curvature_bounds()
    }

    pub fn add_proximal_term(&self, gamma: f64) -> Self {
        add_proximal_term(self, gamma)
    }

    pub fn decrease(&self, x_new: &DVector<f64>) -> f64 {
        model_decrease(self, x_new)
    }

    pub fn solve(&self, lambda: f64, w: &WeightVector, tol: f64) -> Result<DVector<f64>> {
        solve_model(self, lambda, w, tol)
    }

    /// Largest violation of the subgradient optimality condition of
    /// `Q_k(x) + λ Σ w_i|x_i|` at `x`.
    pub fn optimality_violation(&self, lambda: f64, w: &WeightVector, x: &DVector<f64>) -> f64 {
        max_violation(&self.gradient(x), x, lambda, w.as_vector())
    }
}

fn max_violation(q: &DVector<f64>, x: &DVector<f64>, lambda: f64, w: &DVector<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let t = lambda * w[i];
        let v = if x[i] != 0.0 {
            (q[i] + t * x[i].signum()).abs()
        } else {
            (q[i].abs() - t).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// `Q_k(x) + Γ/2 ‖x − x^k‖²`.
pub fn add_proximal_term(model: &LocalModel, gamma: f64) -> LocalModel {
    assert!(gamma >= 0.0, "proximal coefficient must be nonnegative");
    if gamma == 0.0 {
        return model.clone();
    }
    LocalModel {
        kind: model.kind.shifted(gamma),
        anchor: model.anchor.clone(),
        anchor_gradient: model.anchor_gradient.clone(),
    }
}

/// `Q_k(x^k) − Q_k(x_new) = −Q_k(x_new)`.
pub fn model_decrease(model: &LocalModel, x_new: &DVector<f64>) -> f64 {
    -model.value(x_new)
}

pub fn solve_model(model: &LocalModel, lambda: f64, w: &WeightVector, tol: f64) -> Result<DVector<f64>> {
    if w.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: w.len() });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let w = w.as_vector();
    let (a, g) = (&model.anchor, &model.anchor_gradient);
    match &model.kind {
        ModelKind::ProximalFirstOrder { beta } => {
            let z = a - g / *beta;
            let t = w * (lambda / beta);
            Ok(prox_weighted_l1(&z, &t))
        }
        ModelKind::DiagonalQuasiNewton { diag } => Ok(DVector::from_fn(a.len(), |i, _| {
            soft_threshold(a[i] - g[i] / diag[i], lambda * w[i] / diag[i])
        })),
        ModelKind::DenseQuadratic { hessian, shift } => {
            coordinate_descent(hessian, *shift, a, g, lambda, w, tol)
        }
    }
}

/// Cyclic coordinate descent over `i = 0..n`, started at the anchor.
fn coordinate_descent(
    hessian: &DMatrix<f64>,
    shift: f64,
    anchor: &DVector<f64>,
    anchor_gradient: &DVector<f64>,
    lambda: f64,
    w: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    let n = anchor.len();
    let mut x = anchor.clone();
    // q = ∇Q(x), maintained incrementally and refreshed after each sweep
    let mut q = anchor_gradient.clone();
    let mut violation = max_violation(&q, &x, lambda, w);
    if violation <= tol {
        return Ok(x);
    }
    for _ in 0..MAX_SWEEPS {
        for i in 0..n {
            let curvature = hessian[(i, i)] + shift;
            let z = x[i] - q[i] / curvature;
            let next = soft_threshold(z, lambda * w[i] / curvature);
            let delta = next - x[i];
            if delta != 0.0 {
                x[i] = next;
                q.axpy(delta, &hessian.column(i), 1.0);
                q[i] += shift * delta;
            }
        }
        let d = &x - anchor;
        q = anchor_gradient + hessian * &d + &d * shift;
        violation = max_violation(&q, &x, lambda, w);
        if violation <= tol {
            return Ok(x);
        }
    }
    Err(Error::SubproblemNotConverged { sweeps: MAX_SWEEPS, violation })
}
