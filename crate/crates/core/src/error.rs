use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("correspondence error: {0}")]
    Correspondence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error in `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("provider error: {0}")]
    Provider(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("audit error: {0}")]
    Audit(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("sampling error: requested {requested} pairs but only {max} are feasible")]
    Sampling { requested: usize, max: usize },

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input or configuration rather than by a
    /// failure while doing the work. The CLI maps these to exit status 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Config(_)
                | Error::Validation { .. }
                | Error::Parse { .. }
                | Error::Split(_)
                | Error::Sampling { .. }
                | Error::Correspondence(_)
                | Error::Io { .. }
        )
    }
}
