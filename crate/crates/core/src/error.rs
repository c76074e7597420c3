use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: malformed row: {message}")]
    MalformedRow {
        file: String,
        line: usize,
        message: String,
    },

    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),

    #[error("unknown subject {0:?}")]
    UnknownSubject(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("single-class labels: every label equals {0}")]
    SingleClass(u8),

    #[error("column order mismatch between training and prediction design")]
    ColumnMismatch,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stage {stage} failed at (m={m}, k={k}, l={l}): {source}")]
    Stage {
        stage: &'static str,
        m: usize,
        k: usize,
        l: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
