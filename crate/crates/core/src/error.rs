use std::path::PathBuf;

use thiserror::Error;

/// Broad class of a failure, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments, configuration or inconsistent inputs.
    Validation,
    /// The data itself is broken: non-finite values, corrupt files, malformed rows.
    DataQuality,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data quality: {0}")]
    DataQuality(String),

    #[error("not a PHEM container")]
    NotPhem,

    #[error("unsupported PHEM version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("truncated container: {0}")]
    Truncated(String),

    #[error("dimension mismatch: header declares {expected}, record has {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("probe training diverged at step {step}")]
    Diverged { step: usize },

    #[error("insufficient speakers: {}", format_deficits(.0))]
    InsufficientSpeakers(Vec<(String, usize, usize)>),

    #[error("unknown label {label:?} for variable {variable} (no aggregation rule covers it)")]
    UnknownLabel { variable: String, label: String },

    #[error("schema mismatch; divergent keys: {}", .0.join(", "))]
    SchemaMismatch(Vec<String>),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_deficits(deficits: &[(String, usize, usize)]) -> String {
    deficits.iter().map(|(sg, have, need)| format!("{sg}: have {have}, need {need}")).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DataQuality(_)
            | Error::NotPhem
            | Error::UnsupportedVersion { .. }
            | Error::Truncated(_)
            | Error::DimMismatch { .. }
            | Error::Degenerate(_)
            | Error::Diverged { .. }
            | Error::Parse { .. } => ErrorClass::DataQuality,
            Error::InvalidInput(_)
            | Error::Config(_)
            | Error::InsufficientSpeakers(_)
            | Error::UnknownLabel { .. }
            | Error::SchemaMismatch(_)
            | Error::Io { .. } => ErrorClass::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
