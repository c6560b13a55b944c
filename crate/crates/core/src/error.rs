use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {axis}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        axis: String,
        expected: String,
        found: String,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("payload length mismatch in {path}: header dims need {expected} bytes, file has {found}")]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("checkpoint digest mismatch: manifest says {expected}, blob hashes to {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error("checkpoint tensor {name:?} overlaps or is out of order (offset {offset}, previous end {previous_end})")]
    OverlappingOffsets {
        name: String,
        offset: u64,
        previous_end: u64,
    },

    #[error("parameter {name:?} shape mismatch: model has {expected:?}, checkpoint has {found:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("strict load: checkpoint is missing parameters {0:?}")]
    MissingParameters(Vec<String>),

    #[error("unknown config key {0:?}")]
    UnknownConfigKey(String),

    #[error("config: {0}")]
    ConfigParse(String),

    #[error("invalid config value for {key}: {reason}")]
    ConfigValue { key: String, reason: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        axis: impl Into<String>,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            op,
            axis: axis.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
