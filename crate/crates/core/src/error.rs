use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("failed to load video {video_id}: {reason}")]
    Load { video_id: String, reason: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training aborted: {0}")]
    Aborted(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
