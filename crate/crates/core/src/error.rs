//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of an operation (negative time,
    /// non-positive best-known value, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A vertex sequence is not a valid path or tour.
    #[error("invalid path: {0}")]
    InvalidPath(String),

    /// A configuration or construction parameter is inconsistent.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An input exceeds a hard size guard of an exact solver.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// A matching or linear program has no feasible solution.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A linear program has no finite optimum.
    #[error("unbounded: {0}")]
    Unbounded(String),

    /// Model training diverged or was fed inconsistent data.
    #[error("training error: {0}")]
    Training(String),

    /// An instance, model or config file violates its schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Internal invariant failure (should not happen on well-formed inputs).
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 for bad input, 3 for size guards.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Capacity(_) => 3,
            Error::Internal(_) => 1,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}
