use std::fmt;
use thiserror::Error;

/// A single violated invariant, addressed by its JSON field path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl ValidationError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every violation found in one configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration:\n{0}")]
    Validation(#[from] ValidationErrors),
    #[error("nSteps must be at least 1")]
    ZeroSteps,
    #[error("nPaths must be at least 1")]
    ZeroPaths,
    #[error("non-finite {quantity} at step {step} of path {path}")]
    NonFinite {
        quantity: &'static str,
        path: usize,
        step: usize,
    },
    #[error("ensembles do not share a time grid")]
    GridMismatch,
    #[error("expected a {expected} ensemble, got {got}")]
    WrongMeasure {
        expected: crate::model::Measure,
        got: crate::model::Measure,
    },
    #[error("degenerate strike: E^Q of the payoff is zero at k = {0}")]
    DegenerateStrike(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no implied volatility: {0}")]
    NoImpliedVol(String),
    #[error("quadrature did not converge (achieved error estimate {achieved:e})")]
    Quadrature { value: f64, achieved: f64 },
    #[error("{0}")]
    InsufficientData(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
