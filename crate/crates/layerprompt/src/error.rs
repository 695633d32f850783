//! Crate-wide error type.

use std::fmt;

/// Errors produced by the engine, data pipeline and experiment front end.
#[derive(Debug)]
pub enum Error {
    /// Tensor shape disagreement (names both offending shapes).
    Shape(String),
    /// A documented precondition was violated.
    Contract(String),
    /// An index (class label, layer id, ...) was out of range.
    Index(String),
    /// Invalid experiment configuration; holds one message per bad field.
    Config(Vec<String>),
    /// Malformed or inconsistent dataset content.
    Data(String),
    /// Filesystem failure, with the path that caused it.
    Io {
        path: String,
        source: std::io::Error,
    },
    /// JSON (config, report, checkpoint payload) failed to parse.
    Parse(String),
    /// Checkpoint written by an incompatible format version.
    Version { found: u32, expected: u32 },
    /// Checkpoint payload does not match its recorded checksum.
    Integrity(String),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: config errors are 2, everything else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
            Error::Config(fields) => {
                write!(f, "invalid configuration:")?;
                for field in fields {
                    write!(f, "\n  - {field}")?;
                }
                Ok(())
            }
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
            Error::Parse(m) => write!(f, "parse error: {m}"),
            Error::Version { found, expected } => {
                write!(
                    f,
                    "checkpoint version {found} is not supported (expected {expected})"
                )
            }
            Error::Integrity(m) => write!(f, "integrity error: {m}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
