use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("step size too large: p{index} = {p} exceeds 1 at dt = {dt}")]
    StepTooLarge { index: usize, p: f64, dt: f64 },

    #[error("history function undefined at t = {t}")]
    HistoryUndefined { t: f64 },

    #[error("time {t} outside history window [{lo}, {hi}]")]
    OutOfWindow { t: f64, lo: f64, hi: f64 },

    #[error("non-contiguous push: expected t = {expected}, got {got}")]
    NonContiguous { expected: f64, got: f64 },

    #[error("solution diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("ensemble runs diverged: {runs:?}")]
    EnsembleDivergence { runs: Vec<usize> },

    #[error("empty analysis window")]
    EmptyWindow,
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Numerical blow-up, as opposed to bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::EnsembleDivergence { .. }
        )
    }
}
