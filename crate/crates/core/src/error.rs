//! Error type shared across the pipeline stages.

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A required CSV column is absent.
    #[error("schema error: missing required column `{0}`")]
    MissingColumn(String),
    /// A CSV row could not be parsed; `line` is 1-based and counts the header.
    #[error("row error at line {line}: {msg}")]
    Row { line: usize, msg: String },
    /// Input data violates a structural requirement.
    #[error("validation error: {0}")]
    Validation(String),
    /// A value is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Incompatible shapes or too few dimensions.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Invalid configuration or hyperparameter.
    #[error("config error: {0}")]
    Config(String),
    /// A numeric routine failed (singular system, non-PD matrix, ...).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Training diverged or aborted.
    #[error("training error at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },
    /// Model fitting failed outside an epoch loop.
    #[error("fit error: {0}")]
    Fit(String),
    /// The evaluation protocol could not run.
    #[error("evaluation error: {0}")]
    Eval(String),
    /// The survey has no samples left.
    #[error("empty survey: {0}")]
    EmptySurvey(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by the input data rather than configuration
    /// or numerics. The CLI maps these to its data exit code.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::Row { .. }
                | Error::Validation(_)
                | Error::Domain(_)
                | Error::Dimension(_)
                | Error::EmptySurvey(_)
                | Error::Eval(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }

    /// True for configuration errors (CLI exit code 1).
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
