use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hit count {0}: a traced edge executes at least once")]
    InvalidCount(u64),

    #[error("trace format error at line {line}: {message}")]
    TraceFormat { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("no seed covers leaf {0}")]
    NotFound(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("instance {instance}: seeds without trace files: {}", seeds.join(", "))]
    MissingTraces {
        instance: String,
        seeds: Vec<String>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error indicates inconsistent data rather than bad input.
    pub fn is_integrity(&self) -> bool {
        matches!(self, Error::Integrity(_) | Error::NotFound(_))
    }
}
