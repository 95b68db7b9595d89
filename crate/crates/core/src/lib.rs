//! Exact objectives for self-supervised variational autoencoders (SSVAEs)
//! over finite probability spaces.
//!
//! Every integral of the continuous formulation becomes a finite sum here, so
//! the relations between the SSVAE evidence lower bound, latent mutual
//! information and the InfoNCE objective can be checked to machine precision
//! instead of estimated.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`prob`] | finite distributions, joints, conditionals, KL, entropy, MI |
//! | [`model`] | encoders, couplings, priors, model instances, generators |
//! | [`objectives`] | ELBOs, evidence, decomposition, exact and finite-N InfoNCE |
//! | [`ratio`] | tabular logistic classifier recovering log density ratios |
//! | [`trainer`] | parameter vectors, analytic gradients, gradient ascent |
//!
//! The crate is `no_std` and only needs `alloc`. Logarithms are natural
//! throughout, so every information quantity is in nats.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
mod extended;
pub mod math;
pub mod model;
pub mod objectives;
pub mod prob;
pub mod ratio;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{
    random_instance, random_instance_with_prior, Coupling, Dims, Encoder, EncoderKind,
    ModelInstance, PriorChoice, PriorSpec, SharedFactorConfig, SharedFactorModel, Side,
};
pub use objectives::{ObjectiveReport, PairReport};
pub use prob::{Axis, ConditionalTable, FiniteDistribution, FiniteSpace, JointDistribution};
pub use ratio::{RatioFitConfig, TabularLogitClassifier};
pub use rng::SplitMix64;
pub use trainer::{Objective, ObjectiveChoice, ParameterVector, TrainConfig, TrainTrace};
