//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A per-class statistic was requested for a class with no samples.
    #[error("empty class: statistics require at least one sample")]
    EmptyClass,

    /// A matrix stayed non positive definite through the whole jitter ladder.
    #[error("covariance is not positive definite even after jitter escalation to {max_jitter:e}")]
    SingularCovariance { max_jitter: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset contains no data rows")]
    EmptyDataset,

    #[error("slot index {index} out of range for {len} slots")]
    Index { index: usize, len: usize },

    /// Estimation bias is a mean over enabled classes; with none it is undefined.
    #[error("estimation bias undefined: no class is enabled in both estimates")]
    UndefinedBias,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
