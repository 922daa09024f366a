//! Seeded sparse-recovery instances `y = A x_true + e`.
//!
//! Randomness comes from ChaCha8 seeded with the instance seed. Gaussian
//! variates use the Marsaglia polar method; the second variate of each
//! accepted pair is kept for the next draw. Draw order is fixed: the entries
//! of `A` row by row, then the spike positions (partial Fisher–Yates), then
//! the spike signs, then the noise.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::LeastSquares;

/// Default noise standard deviation (variance 1e-4).
pub const DEFAULT_NOISE_STD: f64 = 1e-2;

/// Standard normal sampler using the polar method.
pub struct PolarGaussian<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> PolarGaussian<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        loop {
            let u = 2.0 * self.rng.gen::<f64>() - 1.0;
            let v = 2.0 * self.rng.gen::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * factor);
                return u * factor;
            }
        }
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryInstance {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise_std: f64,
    /// Row-major `m × n`.
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub y: Vec<f64>,
    pub x_true: Vec<f64>,
}

impl RecoveryInstance {
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        if self.a.len() != self.m * self.n {
            return Err(Error::DimensionMismatch { expected: self.m * self.n, got: self.a.len() });
        }
        Ok(DMatrix::from_row_slice(self.m, self.n, &self.a))
    }

    pub fn objective(&self) -> Result<LeastSquares> {
        if self.y.len() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, got: self.y.len() });
        }
        LeastSquares::new(self.matrix()?, DVector::from_column_slice(&self.y))
    }

    pub fn x_true(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_true)
    }

    /// Sorted indices of the nonzero entries of `x_true`.
    pub fn true_support(&self) -> Vec<usize> {
        self.x_true.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_true.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: self.x_true.len() });
        }
        self.objective().map(|_| ())
    }
}

pub fn generate_instance(m: usize, n: usize, k: usize, seed: u64, noise_std: f64) -> Result<RecoveryInstance> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter(format!("dimensions must be positive, got {m}x{n}")));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("need 0 < K <= n, got K = {k}, n = {n}")));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidParameter(format!("noise_std must be nonnegative, got {noise_std}")));
    }
    let mut gauss = PolarGaussian::new(ChaCha8Rng::seed_from_u64(seed));
    let scale = 1.0 / (m as f64).sqrt();
    let a: Vec<f64> = (0..m * n).map(|_| scale * gauss.sample()).collect();

    let mut positions: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = gauss.rng_mut().gen_range(i..n);
        positions.swap(i, j);
    }
    let mut x_true = vec![0.0; n];
    for &pos in &positions[..k] {
        x_true[pos] = if gauss.rng_mut().gen::<bool>() { 1.0 } else { -1.0 };
    }

    let mut y = vec![0.0; m];
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &a[i * n..(i + 1) * n];
        *yi = row.iter().zip(&x_true).map(|(aij, xj)| aij * xj).sum();
    }
    if noise_std > 0.0 {
        for yi in y.iter_mut() {
            *yi += noise_std * gauss.sample();
        }
    }
    Ok(RecoveryInstance { m, n, k, seed, noise_std, a, y, x_true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "small")]
    Small,
    #[serde(rename = "large")]
    Large,
}

impl Profile {
    /// `(m, n, K)`.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            Profile::Small => (256, 512, 64),
            Profile::Large => (1024, 2048, 256),
        }
    }

    pub fn default_count(self) -> usize {
        match self {
            Profile::Small => 50,
            Profile::Large => 10,
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Small => "small",
            Profile::Large => "large",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "small" => Ok(Profile::Small),
            "large" => Ok(Profile::Large),
            other => Err(Error::InvalidParameter(format!("unknown profile {other:?}"))),
        }
    }
}

/// Instance `j` uses seed `base_seed + j`.
pub fn generate_ensemble(profile: Profile, count: usize, base_seed: u64, noise_std: f64) -> Result<Vec<RecoveryInstance>> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let (m, n, k) = profile.dims();
    (0..count as u64)
        .map(|j| generate_instance(m, n, k, base_seed.wrapping_add(j), noise_std))
        .collect()
}
