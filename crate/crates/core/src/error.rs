use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular matrix (|det| = {det:e})")]
    Singular { det: f64 },

    #[error("membership violated: {constraint} (residual {residual:e})")]
    Membership { constraint: &'static str, residual: f64 },

    #[error("{operation}: out of domain: {detail}")]
    OutOfDomain { operation: &'static str, detail: String },

    #[error("{operation}: infeasible: {detail}")]
    Infeasible { operation: &'static str, detail: String },

    #[error("{operation}: no convergence after {iterations} iterations: {detail}")]
    NonConvergence { operation: &'static str, iterations: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn out_of_domain(operation: &'static str, detail: impl Into<String>) -> Self {
        Error::OutOfDomain { operation, detail: detail.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
