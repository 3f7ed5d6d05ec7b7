use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("missing embedding for passage `{0}`")]
    MissingEmbedding(String),

    #[error("array `{name}`: declared {expected} elements, found {found}")]
    SizeMismatch {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("array `{0}` contains non-finite values")]
    NonFinite(String),

    #[error("array `{0}` not found in bundle")]
    MissingArray(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("head index {index} out of range for {heads} heads")]
    HeadOutOfRange { index: usize, heads: usize },

    #[error("all tokens are masked")]
    AllMasked,

    #[error("invalid span {start}..{end} for text of {len} chars")]
    InvalidSpan { start: usize, end: usize, len: usize },

    #[error("distributions have different supports")]
    SupportMismatch,

    #[error("unparseable response: {0:?}")]
    Unparseable(String),

    #[error("retrieval failed for query `{query}`: {message}")]
    Retrieval { query: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
