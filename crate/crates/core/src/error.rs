use std::path::PathBuf;

use thiserror::Error;

use crate::llm::LlmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (wrong arity, bad plan, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("retriever unavailable: {0}")]
    RetrieverUnavailable(String),

    #[error("verification question parse error: {0}")]
    VqgParse(String),

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
