use thiserror::Error;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed or invariant-violating input.
    #[error("input error: {0}")]
    Input(String),
    #[error("space mismatch: expected `{expected}`, found `{found}`")]
    SpaceMismatch { expected: String, found: String },
    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unbounded: {0}")]
    Unbounded(String),
    #[error("no convergence after {iterations} iterations: {detail}")]
    NonConvergence { iterations: usize, detail: String },
    /// The operation is not defined for this transfer (missing operator,
    /// infinite values where finiteness is required, ...).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    /// Two independent computations disagreed.
    #[error("internal consistency error: {0}")]
    Consistency(String),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by bad user input (exit code 2 in the CLI).
    pub fn is_input(&self) -> bool {
        matches!(self, Error::Input(_) | Error::SpaceMismatch { .. } | Error::Schema { .. } | Error::InvalidCoupling(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
