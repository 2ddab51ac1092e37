use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A size, count or hyper-parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Two operands disagree on a dimension.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An index (cluster, token, window) points outside its container.
    #[error("index out of range: {0}")]
    Index(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    /// A tensor container header is malformed or violates an invariant.
    #[error("container format error: {0}")]
    Format(String),

    /// A tensor container payload is shorter or longer than its header claims.
    #[error("container payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    /// A run configuration could not be parsed.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing entry: {0}")]
    Missing(String),

    /// A NaN or infinity surfaced during computation.
    #[error("non-finite value produced in {0}")]
    NonFinite(String),
}

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
