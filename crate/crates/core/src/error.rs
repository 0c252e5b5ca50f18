//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file could not be opened, read or written.
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file was readable but its contents are not in a supported encoding.
    #[error("unsupported format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A text document (annotation or prediction CSV) failed to parse.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    /// Input violates a mathematical precondition (negative energy, non-square matrix, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Not enough classes or patches to build the requested episode or support set.
    #[error("episode error: {0}")]
    Episode(String),

    /// A loss, distance or gradient came out non-finite.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A checkpoint or cache document is malformed or has the wrong version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: u64, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }
}
