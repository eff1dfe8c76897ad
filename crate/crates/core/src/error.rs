use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A non-finite or out-of-range coordinate was fed into an evaluation.
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The implicit step did not reach its tolerance.
    #[error("implicit solver failed after {iterations} iterations (worst residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    /// Model constants fall outside the regime where the contraction constants exist.
    #[error("regime error: {0}")]
    Regime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
