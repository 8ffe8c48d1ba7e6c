use std::path::PathBuf;

/// Errors raised anywhere in the simulation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("estimation failed: {0}")]
    EstimationFailure(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("class {0} has no training rows")]
    EmptyClass(usize),

    #[error("frame rejection rate {rejected}/{total} exceeds the {limit} limit")]
    ExcessiveRejection {
        rejected: usize,
        total: usize,
        limit: f64,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Short stable identifier used in machine-parsable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::EstimationFailure(_) => "estimation_failure",
            Error::InsufficientData(_) => "insufficient_data",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyClass(_) => "empty_class",
            Error::ExcessiveRejection { .. } => "excessive_rejection",
            Error::Parse { .. } => "parse",
            Error::MissingFile(_) => "missing_file",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
