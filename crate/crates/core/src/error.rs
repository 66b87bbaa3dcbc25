//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("noise sigma must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("quantile must be positive, got {0}")]
    NonPositiveQuantile(f64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("calibration infeasible: {0}")]
    CalibrationInfeasible(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("bad file format: {0}")]
    BadFormat(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
