use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative method ran out of budget before meeting its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// An explicit integration step kept producing negative shares.
    #[error("integration step failed after {halvings} step-size halvings")]
    StepFailure { halvings: u32 },

    #[error("insufficient data: {found} usable bins, need at least {required}")]
    InsufficientData { found: usize, required: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
