use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid entry `{id}`: {reason}")]
    InvalidEntry { id: String, reason: String },

    #[error("invalid tag `{0}`")]
    InvalidTag(String),

    #[error("tag sequences differ: {0}")]
    SequenceMismatch(String),

    #[error("joint label `{0}` is not authorized by the schema")]
    Unauthorized(String),

    #[error("non-finite value in input")]
    NonFinite,

    #[error("unknown tree node or leaf: {0}")]
    UnknownNode(String),

    #[error("corpora are not aligned: {0}")]
    Misaligned(String),

    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn entry(id: &str, reason: impl Into<String>) -> Self {
        Error::InvalidEntry {
            id: id.to_string(),
            reason: reason.into(),
        }
    }
}
