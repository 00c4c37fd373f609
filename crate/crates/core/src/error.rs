use thiserror::Error;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate solution: {0}")]
    Degenerate(String),

    #[error("invalid initial point: {0}")]
    InvalidInit(String),

    /// A numerical procedure failed to bracket, converge, or satisfy a runtime
    /// assumption. The message carries the residual or trace that tripped it.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MfgError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(MfgError::InvalidArgument(msg.into()))
}
