//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the mathematical domain of an operation
    /// (non-finite distance, negative variance, dimension mismatch, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called on an object in a state that cannot serve it
    /// (empty mixture model, empty feature gallery, ...).
    #[error("invalid state: {0}")]
    State(String),

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A malformed row in an input file.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Inconsistent or invalid user input (non-monotone frames, duplicate
    /// ids, unknown configuration keys, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A numerical failure such as a non-positive-definite innovation
    /// covariance.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
