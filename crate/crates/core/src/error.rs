//! Crate-wide error type.

/// Failures surfaced by configuration, numerics, and the experiment runner.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its documented domain.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Inputs are structurally valid but degenerate (e.g. all-zero
    /// transmit blocks leave the power normalization undefined).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A linear solve or line search failed beyond the documented
    /// fallbacks.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A solver produced a non-finite iterate and the run was abandoned.
    #[error("run aborted at iteration {iteration}: {reason}")]
    RunAborted { iteration: usize, reason: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
