//! File formats, reports and the `ssvae` command-line driver for
//! [`ssvae_core`].
//!
//! Each command is a plain function of its arguments ([`verify`],
//! [`estimate`], [`train`], [`ratio`]) returning an [`Outcome`]; the binary
//! only parses flags and maps outcomes to exit codes.

pub mod cli;
mod commands;
pub mod output;
pub mod spec;

pub use cli::run;
pub use commands::{
    estimate, ratio, train, verify, EstimateArgs, RatioArgs, RatioTarget, TrainArgs, TrainSource, VerifyArgs,
};
pub use spec::{LoadedSpec, ModelSpec};

/// How a command ended. The discriminant is the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success = 0,
    /// A check failed or an optimizer did not converge.
    Failed = 1,
    InputError = 2,
    IterationCap = 3,
}

impl Outcome {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("invalid arguments: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] ssvae_core::Error),
}

impl LabError {
    pub fn outcome(&self) -> Outcome {
        match self {
            LabError::Core(ssvae_core::Error::NonConvergence { .. }) => Outcome::Failed,
            _ => Outcome::InputError,
        }
    }
}
