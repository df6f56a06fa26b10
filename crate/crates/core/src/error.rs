use thiserror::Error;

/// Errors raised by the hypercut library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A floating-point computation left its valid range (e.g. a Minkowski
    /// pairing below 1 beyond tolerance).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("accuracy error: tolerance {tol:e} not reached, best estimate {best} (error estimate {estimate:e})")]
    Accuracy { best: f64, estimate: f64, tol: f64 },

    /// A structural invariant failed (construction self-check, binning, table validation).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Dirichlet reduction did not terminate.
    #[error("reduction did not terminate after {steps} steps")]
    NonTermination { steps: usize },

    /// An operation was called with its precondition unmet.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A bound or TV curve never reaches the requested level on its grid.
    #[error("no crossing: {0}")]
    NoCrossing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
