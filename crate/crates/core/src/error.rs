use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid privacy pattern: {0}")]
    InvalidPattern(String),

    #[error("index {index} out of range (length {len})")]
    OutOfRange { index: usize, len: usize },

    /// A size guard tripped; the caller should switch to a cheaper mode.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("usage error: {0}")]
    Usage(String),

    /// A constructed object violated an invariant it is guaranteed to meet.
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
