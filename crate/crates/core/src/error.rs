//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by any graphfuse operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("convergence error: {0}")]
    Convergence(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("unknown handle: {0}")]
    UnknownHandle(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
