use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("insufficient anomalies: {required} required, {available} available ({context})")]
    Capacity {
        required: usize,
        available: usize,
        context: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("run {run} failed: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    ///
    /// 2 = usage/argument errors, 3 = data or capacity errors, 4 = numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) | Error::Domain(_) => 2,
            Error::Numeric(_) => 4,
            Error::Run { source, .. } => source.exit_code(),
            Error::Shape(_)
            | Error::Io { .. }
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::DegenerateSplit(_)
            | Error::Capacity { .. }
            | Error::UndefinedMetric(_)
            | Error::Format(_) => 3,
        }
    }
}
