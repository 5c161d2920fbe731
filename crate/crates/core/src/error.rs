use thiserror::Error;

/// Errors produced by solvers, model loading, and file parsing.
#[derive(Debug, Error)]
pub enum Error {
    /// Arguments violate a documented precondition (dimension mismatch,
    /// non-finite entry, index out of range, empty input where one is required).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A file could not be parsed. The message carries the location.
    #[error("parse error: {0}")]
    Parse(String),

    /// A model file parsed but violates the model contract.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A solver failed to produce a valid result.
    #[error("solver error: {0}")]
    Solver(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
