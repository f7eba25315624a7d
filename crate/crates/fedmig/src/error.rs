//! Crate-wide error type. Variants are grouped by the phase that raises
//! them so the CLI can map configuration mistakes to a distinct exit code.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible with the requested operation.
    #[error("shape error in {op}: {message}")]
    Shape { op: &'static str, message: String },

    /// A graph, dataset, or checkpoint violates a structural requirement.
    #[error("structural error: {0}")]
    Structural(String),

    /// A data file could not be parsed; carries the 1-based line number.
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// The experiment configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// A numeric computation produced an unusable value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A loss component became non-finite during training.
    #[error("training error: non-finite value in {component}")]
    Training { component: String },

    /// The federation protocol reached an inconsistent state.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, message: impl Into<String>) -> Self {
        Error::Shape {
            op,
            message: message.into(),
        }
    }

    /// Exit code the CLI should use for this error: misconfiguration and
    /// malformed inputs exit 2, runtime failures exit 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Structural(_) => 2,
            _ => 1,
        }
    }
}
