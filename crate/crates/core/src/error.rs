use thiserror::Error;

/// Errors produced by model construction, inference and effect estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input data or configuration violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix factorization failed inside a recursion.
    #[error("inference failed at t={t}: {reason}")]
    Inference { t: usize, reason: String },

    /// Every optimizer start failed to produce a finite likelihood.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// The panel cannot identify the requested states or estimand.
    #[error("not identifiable: {0}")]
    Identifiability(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
