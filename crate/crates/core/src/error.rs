use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("position {pos} out of range 1..={len}")]
    PositionOutOfRange { pos: usize, len: usize },

    #[error("key position {key} comes after query position {query}")]
    NonCausal { query: usize, key: usize },

    #[error("non-finite logit at position {0}")]
    NonFiniteLogit(usize),

    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible task configuration: {0}")]
    Infeasible(String),

    #[error("malformed task instance: {0}")]
    MalformedInstance(String),

    #[error("angle {theta} violates the bound {bound}")]
    AngleOutOfRange { theta: f64, bound: String },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
