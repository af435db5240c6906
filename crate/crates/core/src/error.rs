use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad or missing input files, malformed records, violated preconditions.
    Input,
    /// Inputs parse but the data they carry is unusable.
    Data,
    /// A quantity is undefined or not finite.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", describe_io(path, source))]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt store: {0}")]
    Corrupt(String),

    #[error("schema error on line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("data error on line {line}: {message}")]
    LineData { line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("instance `{instance}` references unknown id `{id}`")]
    UnresolvedId { instance: String, id: String },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("empty task: {0}")]
    EmptyTask(String),

    #[error("bootstrap iteration {iteration}: {source}")]
    Statistic {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate batch: {0}")]
    Degenerate(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),
}

fn describe_io(path: &std::path::Path, source: &io::Error) -> String {
    if source.kind() == io::ErrorKind::NotFound {
        format!("file not found: {}", path.display())
    } else {
        format!("I/O error on {}", path.display())
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. }
            | Error::Format(_)
            | Error::Schema { .. }
            | Error::Precondition(_) => ErrorClass::Input,
            Error::Corrupt(_)
            | Error::LineData { .. }
            | Error::Data(_)
            | Error::DuplicateId(_)
            | Error::DimensionMismatch { .. }
            | Error::UnresolvedId { .. }
            | Error::EmptyTask(_) => ErrorClass::Data,
            Error::Undefined(_)
            | Error::Numeric(_)
            | Error::Degenerate(_)
            | Error::TrainingAborted(_) => ErrorClass::Numeric,
            Error::Statistic { source, .. } => source.class(),
        }
    }
}
