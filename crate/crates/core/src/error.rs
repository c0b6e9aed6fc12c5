use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A function was called with arguments outside its domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration value violates an invariant.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An operation was attempted on state that cannot support it.
    #[error("invalid state: {0}")]
    State(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("attack error: {0}")]
    Attack(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
