//! Error taxonomy for the pipeline.
//!
//! Variants map onto process exit codes: configuration and I/O problems
//! exit with 1, numerical failures (divergence, non-finite loss) with 2.

use std::io;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad configuration: unknown key, unparsable value, missing required key.
    #[error("config: {0}")]
    Config(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    /// Malformed or inconsistent input data (bad record, vocabulary
    /// mismatch, an item mapped to two distinct attributes, ...).
    #[error("data: {0}")]
    Data(String),

    /// Numerical failure during training: non-finite loss or gradient.
    #[error("numeric: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl std::fmt::Display, source: io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }

    /// Process exit code this error class maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
