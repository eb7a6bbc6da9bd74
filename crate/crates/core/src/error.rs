use std::fmt;

use thiserror::Error;

/// A single violated instance invariant, with the field it was found in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Field path, e.g. `mu[0]` or `suppliers[2].y_hat`.
    pub location: String,
    pub message: String,
}

impl Violation {
    pub fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(Violation::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid instance: {}", join_violations(.0))]
    Validation(Vec<Violation>),

    /// The potential has no finite gradient-smoothness constant; callers
    /// should switch to the mirror-descent dynamic or smooth the instance.
    #[error("non-smooth instance: {0}")]
    NonSmooth(String),

    /// Supplier objective is unbounded or has no unique maximizer.
    #[error("degenerate supplier: {0}")]
    Degenerate(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
