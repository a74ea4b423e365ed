use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("encode error: {0}")]
    Encode(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unbounded second moment: {0}")]
    Unbounded(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("session error: {0}")]
    Session(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
