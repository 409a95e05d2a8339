//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants map onto the
//! distinct failure classes the CLI reports with separate exit codes.

use std::fmt;

/// Errors produced anywhere in the pipeline.
#[derive(Debug)]
pub enum Error {
    /// Incompatible matrix/sequence shapes. Names the operation and both shapes.
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// Invalid argument value (negative stddev, zero fan, empty sequence, ...).
    Argument(String),
    /// Malformed or out-of-range data (bad label, unreadable file content, ...).
    Data(String),
    /// Training failure, e.g. a non-finite gradient or loss. Names the context.
    Training(String),
    /// Frame-count mismatch between modalities; signals an upstream pipeline bug.
    Synchronization(String),
    /// A required earlier phase artifact is missing. Names the missing phase.
    Dependency { missing: String },
    /// Invalid or inconsistent run configuration.
    Config(String),
    /// Unrecognized or unsupported file format / version.
    Format(String),
    /// Checkpoint checksum mismatch (truncated or corrupt file).
    Checksum,
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => write!(
                f,
                "shape mismatch in {}: {}x{} vs {}x{}",
                op, left.0, left.1, right.0, right.1
            ),
            Error::Argument(msg) => write!(f, "invalid argument: {}", msg),
            Error::Data(msg) => write!(f, "data error: {}", msg),
            Error::Training(msg) => write!(f, "training error: {}", msg),
            Error::Synchronization(msg) => write!(f, "synchronization error: {}", msg),
            Error::Dependency { missing } => {
                write!(f, "missing dependency: run the `{}` phase first", missing)
            }
            Error::Config(msg) => write!(f, "config error: {}", msg),
            Error::Format(msg) => write!(f, "format error: {}", msg),
            Error::Checksum => write!(f, "checksum mismatch: file is corrupt or truncated"),
            Error::Io(e) => write!(f, "i/o error: {}", e),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
