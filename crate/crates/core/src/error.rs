use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: not a model file")]
    NotAModel { path: PathBuf },

    #[error("{path}: corrupt model file: {reason}")]
    CorruptModel { path: PathBuf, reason: String },

    #[error("unknown input format {0:?} (expected jsonl, txt or txt-dir)")]
    UnknownFormat(String),

    #[error("empty training class: {0}")]
    EmptyTrainingClass(&'static str),

    #[error("empty filtered set")]
    EmptyFilteredSet,

    #[error("duplicate task result: task {task:?} at alpha {alpha}")]
    DuplicateTaskResult { task: String, alpha: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
