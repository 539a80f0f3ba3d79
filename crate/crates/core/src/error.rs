use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid label id {0} (expected 0, 1 or 2)")]
    InvalidLabel(u64),

    #[error("row {row}: unknown label value {value:?}")]
    UnknownLabel { row: usize, value: String },

    #[error("row {row}: malformed row: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("row {row}: non-finite value in column {column}")]
    NonFinite { row: usize, column: String },

    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("objective evaluation failed at trial {trial}: {message}")]
    ObjectiveFailed { trial: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// Process exit code for this error: 1 usage, 2 io, 3 schema, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::InvalidParameter { .. } => 1,
            Error::MissingFile(_) | Error::Io { .. } => 2,
            Error::InvalidLabel(_)
            | Error::UnknownLabel { .. }
            | Error::MalformedRow { .. }
            | Error::NonFinite { .. }
            | Error::HeaderMismatch { .. }
            | Error::ShapeMismatch(_)
            | Error::EmptyInput(_)
            | Error::ModelFormat(_) => 3,
            Error::NumericalFailure(_) | Error::ObjectiveFailed { .. } => 4,
        }
    }
}
