//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmlError {
    /// Dimensions of two operands do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric input violated a precondition (non-finite, out of range, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value violated an invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A classification label fell outside `[0, c)` or could not be parsed.
    #[error("invalid label: {0}")]
    InvalidLabel(String),

    /// Inference was requested on a bank with every head masked off.
    #[error("no active heads")]
    NoActiveHeads,

    /// A label transform was applied to a dataset it does not fit.
    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    /// A metric is undefined on the given inputs (e.g. zero rank variance).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Model and dataset disagree on task kind or class count.
    #[error("invalid evaluation: {0}")]
    InvalidEval(String),

    /// A data file could not be parsed; carries the offending line number.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Checkpoint or config format/version not supported.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MmlError>;
