//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Column roles could not be resolved against the file header.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell failed to parse; `row` is the 1-based data row.
    #[error("parse error at row {row}, column {column:?}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("covariate column {0:?} is constant")]
    ConstantColumn(String),

    #[error("treatment arm {label:?} has {n} observations, need at least {min}")]
    InsufficientArm { label: String, n: usize, min: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A per-arm SIR or LOESS fit failed inside the recommender.
    #[error("fit failed for arm {label:?}: {message}")]
    ArmFit { label: String, message: String },

    /// Model file or model/data mismatch problems.
    #[error("model error: {0}")]
    Model(String),

    /// The recommended rule never matches the observed assignment, so the
    /// self-normalized value estimate has an empty denominator.
    #[error("value estimate undefined: rule matches no observed assignment")]
    NoOverlap,
}
