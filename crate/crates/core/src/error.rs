use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library. CLI exit codes are derived from
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?} ({context})")]
    Shape {
        expected: Vec<usize>,
        got: Vec<usize>,
        context: String,
    },

    #[error("non-finite value in {context} at timestep {timestep}")]
    NonFinite { context: String, timestep: usize },

    #[error("training diverged in phase {phase} at epoch {epoch} (loss = {loss})")]
    Diverged { phase: u8, epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("insufficient samples: {context} needs at least {required}, got {got}")]
    InsufficientSamples {
        context: String,
        required: usize,
        got: usize,
    },

    #[error("malformed wire message: {0}")]
    Wire(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error on {path}: {message}")]
    Serde { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn serde(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        Error::Serde {
            path: path.into(),
            message: e.to_string(),
        }
    }

    pub(crate) fn shape(expected: &[usize], got: &[usize], context: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            got: got.to_vec(),
            context: context.into(),
        }
    }

    /// 1 for contract/verification failures, 2 for usage/configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) | Error::Parse { .. } | Error::Io { .. } => 2,
            Error::Serde { .. } => 2,
            _ => 1,
        }
    }
}
