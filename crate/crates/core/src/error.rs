use thiserror::Error;

use crate::market::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("regime index {index} out of range for {k} regimes")]
    InvalidIndex { index: usize, k: usize },

    #[error("holding time of regime {regime} saturated at elapsed time {elapsed} (F >= 1 - 1e-12)")]
    SaturatedHoldingTime { regime: usize, elapsed: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid market specification: {0}")]
    InvalidSpec(ValidationReport),

    #[error("time step {dt} exceeds the stability bound {bound}")]
    StabilityViolation { dt: f64, bound: f64 },

    #[error("linear solve failed: {0}")]
    NonConvergence(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
