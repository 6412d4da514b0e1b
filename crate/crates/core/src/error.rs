use thiserror::Error;

/// Errors raised by model fitting, simulation, and the study harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent caller input.
    #[error("invalid input: {0}")]
    Input(String),

    /// A precondition on shapes, indices, or parameter ranges was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A factorization failed even after jitter escalation.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Every optimizer restart failed.
    #[error("optimization failed after {restarts} restarts: {message} (best objective {best_objective})")]
    Optimization {
        restarts: usize,
        best_objective: f64,
        message: String,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
