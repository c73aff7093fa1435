//! Error type shared by all modules.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} is not symmetric")]
    NotSymmetric { what: &'static str },
    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },
    #[error("non-positive diagonal entry at index {index}")]
    NonPositiveDiagonal { index: usize },
    #[error("{what}: index {index} out of range for dimension {n}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        n: usize,
    },
    #[error("{what}: duplicate index {index}")]
    DuplicateIndex { what: &'static str, index: usize },
    #[error("{what} must not be empty")]
    Empty { what: &'static str },
    #[error("{what}: invalid value")]
    InvalidParameter { what: &'static str },
    #[error("conditioning failed: observed block is singular")]
    SingularConditioning,
    #[error("singular constraint system for observation {observation} (condition estimate {cond:e})")]
    SingularConstraint { observation: usize, cond: f64 },
    #[error("invalid observation: {summary}")]
    InvalidObservation { summary: String },
    #[error("unknown route {route:?}")]
    UnknownRoute { route: String },
    #[error("skip at link boundary {boundary} touches an uncovered link")]
    SkipOutsideCoverage { boundary: usize },
    #[error("graph has an isolated vertex at index {index}")]
    IsolatedVertex { index: usize },
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("MAPE undefined: true values below tolerance at flat indices {indices:?}")]
    ZeroTrueValue { indices: Vec<usize> },
    #[error("missing ROPE decision for entry ({i}, {j})")]
    MissingDecision { i: usize, j: usize },
}

impl Error {
    /// Wraps an error with the Gibbs iteration it occurred in.
    pub fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}
