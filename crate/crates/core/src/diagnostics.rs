//! Post-solve certificates: weighted-l1 equivalence, Laplace-prior MAP scales
//! and 2-D contour grids.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::problem::{lp_penalty, LeastSquares, LpProblem, SmoothObjective};

pub const DEFAULT_MARGIN: f64 = 2.0;
/// Lower bound on `|∇_i f(x*)|/λ` when building inactive weights.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// Weights under which a first-order point of the lp problem is stationary for
/// `min f(x) + λ Σ w_i |x_i|`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceCertificate {
    pub support: Vec<usize>,
    /// `p |x_i*|^{p−1}` for `i` in the support.
    pub support_weights: BTreeMap<usize, f64>,
    /// `|∇_i f(x*)| / λ` for `i` off the support.
    pub inactive_lower_bounds: BTreeMap<usize, f64>,
    /// Full weight vector, inactive entries set to `margin · max(bound, floor)`.
    pub weights: DVector<f64>,
    pub max_kkt_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapScales {
    pub b: BTreeMap<usize, f64>,
    pub sigma_sq: f64,
}

/// Serialized form `{"support":[..],"w":{..},"b":{..},"kkt_violation":..}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub support: Vec<usize>,
    pub w: BTreeMap<usize, f64>,
    pub b: BTreeMap<usize, f64>,
    pub kkt_violation: f64,
}

impl CertificateReport {
    pub fn new(cert: &EquivalenceCertificate, scales: &MapScales) -> Self {
        Self {
            support: cert.support.clone(),
            w: cert.weights.iter().copied().enumerate().collect(),
            b: scales.b.clone(),
            kkt_violation: cert.max_kkt_violation,
        }
    }
}

pub fn weighted_l1_certificate<O: SmoothObjective>(
    problem: &LpProblem<O>,
    x_star: &DVector<f64>,
    margin: f64,
) -> Result<EquivalenceCertificate> {
    if !(margin > 1.0) {
        return Err(Error::InvalidParameter(format!("margin must exceed 1, got {margin}")));
    }
    if x_star.len() != problem.dim() {
        return Err(Error::DimensionMismatch { expected: problem.dim(), got: x_star.len() });
    }
    let (lambda, p) = (problem.lambda(), problem.p());
    let grad = problem.objective().gradient(x_star);
    let n = x_star.len();
    let mut weights = DVector::zeros(n);
    let mut support = Vec::new();
    let mut support_weights = BTreeMap::new();
    let mut inactive_lower_bounds = BTreeMap::new();
    let mut violation = 0.0f64;
    for i in 0..n {
        let xi = x_star[i];
        if xi != 0.0 {
            let w = p * xi.abs().powf(p - 1.0);
            weights[i] = w;
            support.push(i);
            support_weights.insert(i, w);
            violation = violation.max((grad[i] + lambda * w * xi.signum()).abs());
        } else {
            let bound = grad[i].abs() / lambda;
            let w = margin * bound.max(WEIGHT_FLOOR);
            weights[i] = w;
            inactive_lower_bounds.insert(i, bound);
            violation = violation.max((grad[i].abs() - lambda * w).max(0.0));
        }
    }
    Ok(EquivalenceCertificate { support, support_weights, inactive_lower_bounds, weights, max_kkt_violation: violation })
}

/// `b_i = 1/w_i` and `σ² = λ`.
pub fn map_laplace_scales(x_star: &DVector<f64>, certificate: &EquivalenceCertificate, lambda: f64) -> MapScales {
    debug_assert_eq!(x_star.len(), certificate.weights.len());
    debug_assert!(certificate.support.iter().all(|&i| x_star[i] != 0.0));
    let b = certificate.weights.iter().enumerate().map(|(i, w)| (i, 1.0 / w)).collect();
    MapScales { b, sigma_sq: lambda }
}

/// `f(x) = ‖x − c‖²`, written as `½‖√2 x − √2 c‖²`.
pub fn quadratic_bowl(center: &[f64]) -> Result<LeastSquares> {
    let n = center.len();
    let s = std::f64::consts::SQRT_2;
    LeastSquares::new(DMatrix::identity(n, n) * s, DVector::from_iterator(n, center.iter().map(|c| s * c)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Points per axis, endpoints included.
    pub resolution: usize,
}

impl GridSpec {
    fn axis(range: (f64, f64), resolution: usize) -> Vec<f64> {
        let step = (range.1 - range.0) / (resolution - 1) as f64;
        (0..resolution).map(|k| range.0 + k as f64 * step).collect()
    }
}

/// Objective values on a `resolution × resolution` grid, stored row-major with
/// `y` as the slow index.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `f + λ Σ|x_i|^p`
    pub f_lp: Vec<f64>,
    /// `f + λ ‖x‖₁`
    pub f_l1: Vec<f64>,
    /// `f + λ Σ w_i |x_i|`
    pub f_wl1: Vec<f64>,
}

impl ContourGrid {
    fn argmin(values: &[f64], nx: usize) -> (usize, usize) {
        let (idx, _) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("grid is nonempty");
        (idx % nx, idx / nx)
    }

    /// `(ix, iy)` of the smallest lp value.
    pub fn argmin_lp(&self) -> (usize, usize) {
        Self::argmin(&self.f_lp, self.xs.len())
    }

    pub fn argmin_l1(&self) -> (usize, usize) {
        Self::argmin(&self.f_l1, self.xs.len())
    }

    pub fn argmin_wl1(&self) -> (usize, usize) {
        Self::argmin(&self.f_wl1, self.xs.len())
    }

    /// Grid spacing `(hx, hy)`; a point's cell extends half a spacing each way.
    pub fn spacing(&self) -> (f64, f64) {
        let h = |v: &[f64]| if v.len() > 1 { v[1] - v[0] } else { 0.0 };
        (h(&self.xs), h(&self.ys))
    }

    pub fn value_lp(&self, ix: usize, iy: usize) -> f64 {
        self.f_lp[iy * self.xs.len() + ix]
    }

    /// Writes `x,y,f_lp,f_wl1,f_l1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        writer.write_record(["x", "y", "f_lp", "f_wl1", "f_l1"])?;
        let nx = self.xs.len();
        for (iy, y) in self.ys.iter().enumerate() {
            for (ix, x) in self.xs.iter().enumerate() {
                let idx = iy * nx + ix;
                writer.write_record([
                    fmt_f64(*x),
                    fmt_f64(*y),
                    fmt_f64(self.f_lp[idx]),
                    fmt_f64(self.f_wl1[idx]),
                    fmt_f64(self.f_l1[idx]),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Evaluates the lp, plain l1 and weighted-l1 objectives on a 2-D grid.
///
/// `lambda` may be zero here, which leaves only the smooth part.
pub fn contour_grid<O: SmoothObjective>(
    objective: &O,
    lambda: f64,
    p: f64,
    weights: &DVector<f64>,
    spec: &GridSpec,
) -> Result<ContourGrid> {
    if objective.dim() != 2 {
        return Err(Error::InvalidParameter(format!("contour grids need a 2-D problem, got n = {}", objective.dim())));
    }
    if weights.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: weights.len() });
    }
    if spec.resolution < 2 {
        return Err(Error::InvalidParameter("resolution must be at least 2".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let xs = GridSpec::axis(spec.x_range, spec.resolution);
    let ys = GridSpec::axis(spec.y_range, spec.resolution);
    let rows: Vec<Vec<(f64, f64, f64)>> = ys
        .par_iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    let point = DVector::from_column_slice(&[x, y]);
                    let f = objective.value(&point);
                    let l1 = x.abs() + y.abs();
                    let wl1 = weights[0] * x.abs() + weights[1] * y.abs();
                    (f + lambda * lp_penalty(&point, p), f + lambda * l1, f + lambda * wl1)
                })
                .collect()
        })
        .collect();
    let cells = rows.into_iter().flatten();
    let (mut f_lp, mut f_l1, mut f_wl1) = (Vec::new(), Vec::new(), Vec::new());
    for (a, b, c) in cells {
        f_lp.push(a);
        f_l1.push(b);
        f_wl1.push(c);
    }
    Ok(ContourGrid { xs, ys, f_lp, f_l1, f_wl1 })
}
