//! Crate-wide error type.
//!
//! Every fallible operation in the crate returns [`Error`]; the CLI maps the
//! variants onto process exit codes (configuration and usage problems exit
//! with 1, statistical verdict failures with 2).

use thiserror::Error;

/// Unified error type for grid construction, simulation, quadrature and
/// report generation.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside its documented domain (non-positive horizon,
    /// NaN input, too few samples, malformed tag, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The volatility matrix is rank deficient, so no market price of risk
    /// exists.
    #[error("singular volatility matrix: smallest singular value {smallest:e} below {tolerance:e} times the largest")]
    SingularMatrix { smallest: f64, tolerance: f64 },

    /// A simulated or integrated quantity became non-finite; `location`
    /// pinpoints the first offending step or panel.
    #[error("numeric failure at {location}: {what}")]
    NumericFailure { location: String, what: String },

    /// The scheme produced values that indicate the step size is too coarse
    /// for a trustworthy answer.
    #[error("numerical stability violated at node {node}: {what}; advice: {advice}")]
    Stability {
        node: usize,
        what: String,
        advice: String,
    },

    /// A quadrature did not reach the requested tolerance within its depth
    /// budget.
    #[error("quadrature failed to converge: error estimate {error_estimate:e} above tolerance {tolerance:e} after {evaluations} evaluations")]
    QuadratureNotConverged {
        error_estimate: f64,
        tolerance: f64,
        evaluations: usize,
    },

    /// Report serialisation or file output failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON encoding of a report failed.
    #[error("serialisation error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for [`Error::InvalidArgument`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
