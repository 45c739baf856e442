use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("fixed-point iteration did not converge within {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("tau nonpositive at M=1")]
    TauNonPositive,

    #[error("diagnostic unavailable: {0}")]
    DiagnosticUnavailable(String),

    #[error("ciphertext was produced under a different key")]
    KeyMismatch,
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True for errors that come from the learning iterations rather than
    /// from malformed inputs.
    pub fn is_convergence(&self) -> bool {
        matches!(self, Error::Convergence { .. } | Error::TauNonPositive | Error::Numeric(_))
    }
}
