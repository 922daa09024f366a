//! IRL1 weights and the two epsilon schedules.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::check_epsilon;

/// Strictly positive, finite weights `w_i = p(|x_i| + ε_i)^{p−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(DVector<f64>);

impl WeightVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn compute_weights(x: &DVector<f64>, eps: &DVector<f64>, p: f64) -> Result<WeightVector> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("p must lie in (0, 1), got {p}")));
    }
    check_epsilon(eps, x.len())?;
    Ok(WeightVector(x.zip_map(eps, |xi, ei| p * (xi.abs() + ei).powf(p - 1.0))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpsStrategy {
    /// `ε ← μ ε` everywhere.
    #[serde(rename = "geometric")]
    Geometric,
    /// Freeze `ε_i` where the new iterate is exactly zero, shrink it elsewhere.
    #[serde(rename = "sr")]
    SmartReweighting,
}

impl fmt::Display for EpsStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EpsStrategy::Geometric => "geometric",
            EpsStrategy::SmartReweighting => "sr",
        })
    }
}

impl FromStr for EpsStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "geometric" | "geo" => Ok(EpsStrategy::Geometric),
            "sr" | "smart" => Ok(EpsStrategy::SmartReweighting),
            other => Err(Error::InvalidParameter(format!("unknown epsilon strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonState {
    eps: DVector<f64>,
    mu: f64,
    strategy: EpsStrategy,
}

impl EpsilonState {
    pub fn new(eps: DVector<f64>, mu: f64, strategy: EpsStrategy) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::InvalidParameter(format!("mu must lie in (0, 1), got {mu}")));
        }
        check_epsilon(&eps, eps.len())?;
        Ok(Self { eps, mu, strategy })
    }

    /// Broadcasts a scalar `eps0` to `n` components.
    pub fn broadcast(n: usize, eps0: f64, mu: f64, strategy: EpsStrategy) -> Result<Self> {
        Self::new(DVector::from_element(n, eps0), mu, strategy)
    }

    pub fn eps(&self) -> &DVector<f64> {
        &self.eps
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn strategy(&self) -> EpsStrategy {
        self.strategy
    }

    pub fn update_geometric(&self) -> Self {
        Self { eps: &self.eps * self.mu, ..self.clone() }
    }

    pub fn update_smart(&self, x_new: &DVector<f64>) -> Self {
        assert_eq!(x_new.len(), self.eps.len(), "iterate and epsilon dimensions differ");
        let mu = self.mu;
        let eps = self.eps.zip_map(x_new, |e, xi| if xi == 0.0 { e } else { mu * e });
        Self { eps, ..self.clone() }
    }

    /// Applies the configured strategy given the freshly computed iterate.
    pub fn update(&self, x_new: &DVector<f64>) -> Self {
        match self.strategy {
            EpsStrategy::Geometric => self.update_geometric(),
            EpsStrategy::SmartReweighting => self.update_smart(x_new),
        }
    }
}
