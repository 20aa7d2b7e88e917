//! Amortized Bayesian model comparison without the standard library.
//!
//! The crate bundles everything needed to train conditional-density
//! surrogates on simulations, optionally with a self-consistency penalty on
//! unlabeled datasets, and to turn them into log marginal likelihood
//! estimates that can be checked against independent evidence oracles:
//!
//! - [`tensor`]: dense tensors, a reverse-mode gradient tape and an
//!   adaptive-moment optimizer.
//! - [`nn`]: affine coupling flows, deep-set and recurrent summary networks,
//!   the MMD summary regularizer and the surrogate bundles built from them.
//! - [`models`]: Gaussian location, racing diffusion and autoregressive
//!   model families with priors, simulators and exact likelihoods.
//! - [`training`]: scoring-rule and self-consistency losses and the training loop.
//! - [`evidence`]: surrogate evidence estimators, posterior model probabilities.
//! - [`oracles`]: quadrature, random-walk Metropolis, Laplace importance
//!   sampling and bridge sampling.
//!
//! IO, file formats and the command line live in the `abmc` crate.

#![no_std]
// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod evidence;
pub mod math;
pub mod models;
pub mod nn;
pub mod oracles;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use models::{Dataset, GenerativeModel};
pub use tensor::{ParamStore, Tape, Tensor, Var};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
