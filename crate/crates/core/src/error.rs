use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    /// A required probability ratio has a zero denominator and positive numerator.
    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("enumeration of {requested} responses exceeds the cap of {cap}")]
    EnumerationCap { requested: u128, cap: u128 },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The training loss became NaN or infinite, usually because the learning rate is too high.
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("every learning rate in the grid diverged")]
    AllDiverged,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-positive value {value} at index {index}; log-log fit requires strictly positive data")]
    NonPositiveValue { index: usize, value: f64 },

    #[error("data source `{0}` requires an offline dataset")]
    MissingOfflineDataset(&'static str),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    /// A configuration value failed validation; `field` is its dotted path.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("incompatible metric schemas: {0}")]
    SchemaIncompatible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

impl LabError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
