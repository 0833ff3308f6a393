//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SsepError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix not positive definite in {0}")]
    NotPositiveDefinite(&'static str),

    /// The coupling v = site + cavity does not hold componentwise.
    #[error("equality constraint violated at component {index}: residual {residual:e}")]
    EqualityConstraint { index: usize, residual: f64 },

    /// A precision parameter sits below its required floor.
    #[error("inequality constraint violated: {role} precision[{index}] = {value:e} below floor {floor:e}")]
    InequalityConstraint {
        role: &'static str,
        index: usize,
        value: f64,
        floor: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("tilted variance not positive at site {index}: {value:e}")]
    DegenerateTiltedVariance { index: usize, value: f64 },

    /// The outer loop observed an energy increase beyond slack. This is the
    /// algorithm's correctness alarm, not a recoverable state.
    #[error(
        "energy increased at outer iteration {iteration}: {previous} -> {current} (slack {slack:e})"
    )]
    DescentViolation {
        iteration: usize,
        previous: f64,
        current: f64,
        slack: f64,
    },

    #[error("KKT multiplier positive at site {index}: {value:e} (inner solve insufficiently converged)")]
    KktViolation { index: usize, value: f64 },

    #[error("dimension {d} exceeds enumeration cap {max_d}")]
    EnumerationCap { d: usize, max_d: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SsepError>;
