use thiserror::Error;

use crate::tuner::TuningOutcome;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("failed to read dataset {path}: {reason}")]
    DatasetIo { path: String, reason: String },

    #[error("step overflow: doubling past 2^62 at iteration {iteration}")]
    StepOverflow { iteration: u64 },

    /// The loop exhausted its step without accepting any candidate. The
    /// outcome (trace and privacy spent) is carried so callers can still
    /// report it.
    #[error("no candidate selected after {} iterations", .0.iterations)]
    NoCandidateSelected(Box<TuningOutcome>),

    #[error("private training failed: {0}")]
    PrivateTrain(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
