use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the forecasting engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("category {index} out of range for feature `{feature}` (cardinality {cardinality})")]
    Category { feature: String, index: usize, cardinality: usize },

    #[error("data error at {timestamp}: {message}")]
    Data { timestamp: String, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate record for timestamp {0}")]
    DuplicateTimestamp(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("model file checksum mismatch: {0}")]
    Checksum(String),

    #[error("malformed model file: {0}")]
    Malformed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
