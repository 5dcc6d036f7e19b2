use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("I/O error on {path}: {source}")]
    PathIo { path: PathBuf, source: io::Error },

    #[error("XML parse error at byte {offset}: {message}")]
    Xml { offset: u64, message: String },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid {format} data: {message}")]
    Format { format: &'static str, message: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged: non-finite loss at batch {batch} of epoch {epoch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("unknown place ids: {}", .0.join(", "))]
    UnknownPlaces(Vec<String>),

    #[error("{required} required: run it before {stage} (missing {missing})")]
    Prerequisite {
        stage: &'static str,
        required: &'static str,
        missing: String,
    },

    #[error("artifact directory is locked by another run: {0}")]
    Locked(PathBuf),
}

impl Error {
    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }

    pub(crate) fn path_io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::PathIo {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad input or misuse rather than a bug or environment
    /// failure. The CLI maps these to exit code 1.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::PathIo { .. })
    }
}
