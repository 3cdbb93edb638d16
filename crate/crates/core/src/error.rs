use thiserror::Error;

/// Errors produced by the estimators, simulators and the replication harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated (dimensions, parameter ranges, non-finite values).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical procedure failed (root finder, factorization, optimizer divergence, overflow guard).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed data files or configuration.
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
