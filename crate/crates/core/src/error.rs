//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical parameter violates its invariant (ordering, positivity, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A state vector entered a region where the model is singular.
    #[error("singular state: {0}")]
    SingularState(String),

    /// UKF tuning scalars violate their constraints.
    #[error("invalid UKF tuning: {0}")]
    InvalidTuning(String),

    /// A matrix that must be positive (semi-)definite failed factorization.
    #[error("covariance is not positive semi-definite ({context})")]
    NonPsdCovariance { context: String },

    /// A propagated quantity became non-finite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// An iterative solve did not reach its tolerance.
    #[error("no convergence: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    /// Linear-algebra conditioning failure (singular solve, ...).
    #[error("numerical conditioning failure: {0}")]
    Conditioning(String),

    /// Time integration failed.
    #[error("integration failure at t = {t:.6} s: {message}")]
    Integration { t: f64, message: String },

    /// A PMU frame is unusable (zero-magnitude phasor, bad timestamps, ...).
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    /// Configuration file problem, with the offending line when known.
    #[error("config error (line {line}): {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(line: usize, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }

    /// True for errors a CLI should map to the configuration exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::InvalidParameter(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
