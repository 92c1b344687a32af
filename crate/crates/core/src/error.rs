use thiserror::Error;

use crate::protocol::ParseError;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was called in a state where it is not allowed.
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    /// The text backend failed after exhausting its retries.
    #[error("backend error: {0}")]
    Backend(String),
    #[error("vote error: {0}")]
    Vote(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config file error: {0}")]
    Toml(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn usage_err(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
