use std::path::PathBuf;

use thiserror::Error;

use crate::voxel::Repr;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("block has no occupied voxel")]
    EmptyBlock,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("representation mismatch: expected {expected}, found {found}")]
    ReprMismatch { expected: Repr, found: Repr },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("no usable feature map")]
    NoUsableFeature,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
