use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong between reading the input tables and
/// writing a report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("indicator `{0}` has no entry in the polarity file")]
    MissingPolarity(String),

    #[error("maximum-likelihood estimate does not exist: entity `{entity}` {reason}")]
    MleDoesNotExist { entity: String, reason: String },

    #[error("Newman iteration did not converge after {iterations} sweeps (last max relative change {last_change:.3e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("non-finite log-likelihood at iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error category, used by the command line front-end to pick an
/// exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numeric,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Validation(_)
            | Error::Parse { .. }
            | Error::MissingPolarity(_)
            | Error::MleDoesNotExist { .. } => ErrorKind::Validation,
            Error::NoConvergence { .. } | Error::NonFiniteLikelihood { .. } | Error::Numeric(_) => {
                ErrorKind::Numeric
            }
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::Validation(format!($($arg)*))
    };
}
pub(crate) use invalid;
