use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid model or algorithm parameter.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    /// Argument outside the domain of an operation (wrong regime, range, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// Sampling did not terminate within its rejection budget.
    #[error("sampling error: {0}")]
    Sampling(String),
    /// Iteration failed to converge or produced non-finite state.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Input data does not satisfy an operation precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }
}
