use thiserror::Error;

/// Errors raised by the solver toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    #[error("artifact format error: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("offline build failed: {0}")]
    Offline(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
