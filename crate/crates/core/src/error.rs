use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum PaError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("convergence failure: {message}")]
    Convergence {
        message: String,
        /// Best iterate reached before giving up, if any.
        best: Option<Vec<f64>>,
        /// Residual or score norm at `best`.
        residual: Option<f64>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined ratio: no nodes of degree {0}")]
    UndefinedRatio(usize),

    #[error("truncation error: {0}")]
    Truncation(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("urn process reached an absorbing state (all weights zero)")]
    Absorbing,

    #[error("procedure failed: {0}")]
    Procedure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PaError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        PaError::Domain(msg.into())
    }

    pub(crate) fn convergence(msg: impl Into<String>, best: Option<Vec<f64>>, residual: Option<f64>) -> Self {
        PaError::Convergence {
            message: msg.into(),
            best,
            residual,
        }
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        PaError::Parse(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, PaError>;
