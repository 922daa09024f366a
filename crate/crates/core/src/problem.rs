//! Smooth losses, the lp-regularized objective and its epsilon-smoothed surrogate.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the power iteration behind [`LeastSquares::lipschitz_estimate`].
pub const LIPSCHITZ_TOL: f64 = 1e-8;
/// Inflation applied to the converged power-iteration eigenvalue.
pub const LIPSCHITZ_INFLATION: f64 = 1.01;
const POWER_ITERATION_BUDGET: usize = 20_000;

/// A continuously differentiable loss `f` accessed through a joint value/gradient oracle.
pub trait SmoothObjective: Send + Sync {
    fn dim(&self) -> usize;

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>);

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.value_and_gradient(x).0
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.value_and_gradient(x).1
    }

    /// Upper bound on the Lipschitz constant of the gradient, if known.
    fn lipschitz_estimate(&self) -> Option<f64> {
        None
    }

    /// `f(x) - f(x_new)`.
    ///
    /// Implementations may override this with a formulation that avoids
    /// cancellation when the two points are close.
    fn decrease(&self, x: &DVector<f64>, x_new: &DVector<f64>) -> f64 {
        self.value(x) - self.value(x_new)
    }
}

/// `f(x) = ½‖Ax − y‖²`.
#[derive(Debug)]
pub struct LeastSquares {
    a: DMatrix<f64>,
    y: DVector<f64>,
    lipschitz: OnceLock<Option<f64>>,
}

impl Clone for LeastSquares {
    fn clone(&self) -> Self {
        let lipschitz = OnceLock::new();
        if let Some(v) = self.lipschitz.get() {
            let _ = lipschitz.set(*v);
        }
        Self { a: self.a.clone(), y: self.y.clone(), lipschitz }
    }
}

impl LeastSquares {
    pub fn new(a: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: y.len() });
        }
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidParameter("matrix must have positive dimensions".into()));
        }
        Ok(Self { a, y, lipschitz: OnceLock::new() })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.y
    }

    /// The constant Hessian `AᵀA`.
    pub fn hessian(&self) -> DMatrix<f64> {
        self.a.tr_mul(&self.a)
    }

    /// Power-iteration estimate of `λ_max(AᵀA)`, inflated by [`LIPSCHITZ_INFLATION`].
    pub fn estimate_lipschitz(&self, tol: f64) -> Result<f64> {
        estimate_lipschitz(&self.a, tol)
    }

    pub fn to_container(&self) -> MatrixContainer {
        MatrixContainer::from_parts(&self.a, &self.y)
    }
}

impl SmoothObjective for LeastSquares {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let r = self.residual(x);
        let g = self.a.tr_mul(&r);
        (0.5 * r.norm_squared(), g)
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.residual(x).norm_squared()
    }

    fn lipschitz_estimate(&self) -> Option<f64> {
        *self
            .lipschitz
            .get_or_init(|| self.estimate_lipschitz(LIPSCHITZ_TOL).ok())
    }

    // f(x) − f(x+d) = −rᵀAd − ½‖Ad‖², no cancellation between two large values.
    fn decrease(&self, x: &DVector<f64>, x_new: &DVector<f64>) -> f64 {
        let r = self.residual(x);
        let ad = &self.a * (x_new - x);
        -r.dot(&ad) - 0.5 * ad.norm_squared()
    }
}

/// Power iteration on `AᵀA`; returns the converged Rayleigh quotient times 1.01.
pub fn estimate_lipschitz(a: &DMatrix<f64>, tol: f64) -> Result<f64> {
    let n = a.ncols();
    if n == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    // Fixed pseudo-random start so the iteration is deterministic and almost
    // surely not orthogonal to the leading eigenvector.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_11a5);
    let mut v = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
    v /= v.norm();
    let mut estimate = 0.0;
    for it in 0..POWER_ITERATION_BUDGET {
        let av = a * &v;
        let rayleigh = av.norm_squared();
        let w = a.tr_mul(&av);
        let norm = w.norm();
        if !(norm > 0.0) || !rayleigh.is_finite() {
            return Err(Error::PowerIterationFailed { iterations: it + 1 });
        }
        v = w / norm;
        if it > 0 && (rayleigh - estimate).abs() <= tol * rayleigh {
            return Ok(rayleigh.max(estimate) * LIPSCHITZ_INFLATION);
        }
        estimate = rayleigh;
    }
    Err(Error::PowerIterationFailed { iterations: POWER_ITERATION_BUDGET })
}

/// Sum of `|x_i|^p`, with `|0|^p = 0`.
pub fn lp_penalty(x: &DVector<f64>, p: f64) -> f64 {
    x.iter().filter(|v| **v != 0.0).map(|v| v.abs().powf(p)).sum()
}

/// Sum of `(|x_i| + ε_i)^p`.
pub fn smoothed_penalty(x: &DVector<f64>, eps: &DVector<f64>, p: f64) -> Result<f64> {
    check_epsilon(eps, x.len())?;
    Ok(x.iter().zip(eps.iter()).map(|(v, e)| (v.abs() + e).powf(p)).sum())
}

pub(crate) fn check_epsilon(eps: &DVector<f64>, n: usize) -> Result<()> {
    if eps.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: eps.len() });
    }
    match eps.iter().enumerate().find(|(_, e)| !(**e > 0.0)) {
        Some((index, &value)) => Err(Error::NonPositiveEpsilon { index, value }),
        None => Ok(()),
    }
}

/// `min f(x) + λ Σ|x_i|^p` with `λ > 0` and `0 < p < 1`.
#[derive(Debug, Clone)]
pub struct LpProblem<O> {
    objective: O,
    lambda: f64,
    p: f64,
}

impl<O: SmoothObjective> LpProblem<O> {
    pub fn new(objective: O, lambda: f64, p: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("p must lie in (0, 1), got {p}")));
        }
        Ok(Self { objective, lambda, p })
    }

    pub fn objective(&self) -> &O {
        &self.objective
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    /// `F(x) = f(x) + λ Σ|x_i|^p`.
    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.objective.value(x) + self.lambda * lp_penalty(x, self.p)
    }

    /// `F(x, ε) = f(x) + λ Σ(|x_i| + ε_i)^p`; rejects any `ε_i ≤ 0`.
    pub fn evaluate_smoothed(&self, x: &DVector<f64>, eps: &DVector<f64>) -> Result<f64> {
        let penalty = smoothed_penalty(x, eps, self.p)?;
        Ok(self.objective.value(x) + self.lambda * penalty)
    }
}

/// JSON container for a dense least-squares instance. `A` is stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixContainer {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub y: Vec<f64>,
}

impl MatrixContainer {
    pub fn from_parts(a: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let (m, n) = a.shape();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            data.extend(a.row(i).iter().copied());
        }
        Self { m, n, a: data, y: y.iter().copied().collect() }
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        if self.a.len() != self.m * self.n {
            return Err(Error::DimensionMismatch { expected: self.m * self.n, got: self.a.len() });
        }
        Ok(DMatrix::from_row_slice(self.m, self.n, &self.a))
    }

    pub fn into_objective(self) -> Result<LeastSquares> {
        let a = self.matrix()?;
        LeastSquares::new(a, DVector::from_vec(self.y))
    }
}
