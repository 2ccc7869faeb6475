use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a domain invariant (coordinates, probabilities, ...).
    #[error("{0}")]
    Validation(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    Data(String),

    #[error("non-finite value after layer {layer} ({kind})")]
    NonFinite { layer: usize, kind: &'static str },

    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("unsupported container version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("wrong artifact type: expected {expected}, found {found}")]
    WrongArtifact {
        expected: &'static str,
        found: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable category, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Shape { .. } => "shape",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::NonFinite { .. } => "numeric",
            Error::Parse { .. } => "parse",
            Error::Corrupt(_) => "corrupt",
            Error::UnsupportedVersion { .. } => "version",
            Error::WrongArtifact { .. } => "artifact-type",
            Error::Io { .. } => "io",
            Error::Usage(_) => "usage",
        }
    }
}
