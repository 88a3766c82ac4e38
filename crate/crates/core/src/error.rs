use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    /// An invalid configuration value; `key` names the offending setting.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// An API was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// A generated channel had no energy in the retained rows.
    #[error("degenerate CSI sample: truncated matrix is all zeros")]
    DegenerateSample,

    /// A binary artifact failed to parse.
    #[error("format error in {what} at byte {offset}: {reason}")]
    Format { what: &'static str, offset: u64, reason: String },

    /// A binary artifact was written by an incompatible format version.
    #[error("{what} version {found} is not supported (expected {expected})")]
    Version { what: &'static str, found: u32, expected: u32 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    pub fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
