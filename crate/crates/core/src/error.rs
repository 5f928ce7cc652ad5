use std::path::PathBuf;

use thiserror::Error;

use crate::guidance::BridgeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {t} outside the curve domain [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },
    #[error("derivative order {0} not supported (max 3)")]
    DerivativeOrder(usize),
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("knot {u} already has full multiplicity")]
    KnotMultiplicity { u: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("point at depth {depth} is not in front of the near plane ({near})")]
    Clipped { depth: f64, near: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("stroke gradient does not match the forward batch: {0}")]
    Provenance(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("guidance bridge: {0}")]
    Bridge(#[from] BridgeError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Path of the offending input, when the error came from a file.
    pub fn path(&self) -> Option<&std::path::Path> {
        match self {
            Error::Parse { path, .. } | Error::Io { path, .. } | Error::Format { path, .. } => Some(path),
            _ => None,
        }
    }
}
