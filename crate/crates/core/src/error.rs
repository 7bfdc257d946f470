use std::io;

use thiserror::Error;

use crate::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad hyperparameters, empty inputs).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument violated an operation's precondition.
    #[error("argument error: {0}")]
    Argument(String),

    #[error("cannot decode token id {id}: vocabulary has {vocab_size} entries")]
    Decode { id: TokenId, vocab_size: usize },

    /// Two inputs that must agree (vocabulary sizes, distributions) do not.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("registry error: {0}")]
    Registry(String),

    /// Outcomes cannot be paired across methods (misaligned examples or seeds).
    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("stage `{stage}` failed after completing {completed:?}: {source}")]
    Stage {
        stage: String,
        completed: Vec<String>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
