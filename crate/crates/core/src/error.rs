use alloc::boxed::Box;
use alloc::string::String;

use crate::trainer::TrainTrace;

/// Errors raised by the probability algebra, model construction, objectives
/// and optimizers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("a finite space needs at least one label")]
    EmptySpace,

    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),

    #[error("{what}: expected {expected} entries, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what}: entry `{label}` is not a finite number ({value})")]
    NonFinite {
        what: &'static str,
        label: String,
        value: f64,
    },

    #[error("{what}: entry `{label}` is negative ({value})")]
    NegativeProbability {
        what: &'static str,
        label: String,
        value: f64,
    },

    #[error("{what} sums to {sum}, expected 1 within 1e-12")]
    NotNormalized { what: String, sum: f64 },

    #[error("spaces do not match: {0}")]
    SpaceMismatch(&'static str),

    #[error("conditioning on `{0}` which has zero probability")]
    ZeroMarginal(String),

    #[error("divergence undefined: q(`{0}`) = 0 where p > 0")]
    AbsoluteContinuity(String),

    #[error("latent `{0}` has zero induced probability")]
    UnreachedLatent(String),

    #[error("coupling value at ({row}, {col}) must be strictly positive and finite, found {value}")]
    NonPositiveCoupling { row: usize, col: usize, value: f64 },

    #[error("operation requires {expected}")]
    PriorMismatch { expected: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no convergence after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        trace: Option<Box<TrainTrace>>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
