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

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid post {post_id}: {reason}")]
    InvalidPost { post_id: u64, reason: String },

    #[error("unknown image reference {image_ref:?} in post {post_id}")]
    DanglingImage { post_id: u64, image_ref: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range for {what} of size {size}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero vector passed to {0}")]
    ZeroVector(&'static str),

    #[error("non-finite {what} in {name}")]
    NonFinite { what: &'static str, name: String },

    #[error("not enough unique images: need {needed} captioned test images, have {available}")]
    InsufficientImages { needed: usize, available: usize },

    #[error("degenerate fold: {0}")]
    DegenerateFold(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing cached activations for {0}")]
    MissingCache(String),

    #[error("missing retrieval task {0}")]
    MissingTask(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
