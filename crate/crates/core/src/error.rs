//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("source condition unsatisfiable: {0}")]
    SourceConditionUnsatisfiable(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("method unavailable: {0}")]
    MethodUnavailable(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("packing not found after {0} proposals; retry with a new seed")]
    PackingNotFound(u64),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
