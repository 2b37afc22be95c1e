use std::path::PathBuf;

use crate::losses::LossBreakdown;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller handed us something that violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite gradient at optimizer step {step}: {detail}")]
    NonFiniteGradient { step: usize, detail: String },

    /// Training diverged. The trace holds every completed step.
    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss {
        step: usize,
        trace: Vec<LossBreakdown>,
    },

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("malformed {kind} data: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad caller input rather than runtime failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::Format { .. } | Error::Io { .. }
        )
    }
}
