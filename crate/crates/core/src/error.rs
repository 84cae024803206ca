use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the association pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("index {index} out of range (len {len}) in {what}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable category name, used for CLI exit codes and FFI status codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Dimension { .. } | Error::Index { .. } | Error::Contract(_) => ErrorCategory::Usage,
            Error::Config(_) => ErrorCategory::Config,
            Error::Data(_) | Error::Parse { .. } => ErrorCategory::Data,
            Error::Runtime(_) => ErrorCategory::Runtime,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Config,
    Data,
    Runtime,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 2,
            ErrorCategory::Config => 3,
            ErrorCategory::Data => 4,
            ErrorCategory::Runtime => 5,
            ErrorCategory::Io => 6,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
