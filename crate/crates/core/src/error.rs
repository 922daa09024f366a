use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("smoothing parameter must be strictly positive (eps[{index}] = {value})")]
    NonPositiveEpsilon { index: usize, value: f64 },

    #[error("power iteration did not converge after {iterations} steps")]
    PowerIterationFailed { iterations: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("coordinate descent stopped after {sweeps} sweeps with violation {violation:e}")]
    SubproblemNotConverged { sweeps: usize, violation: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
