//! Dense tensors, a reverse-mode gradient tape and the parameter store with
//! its adaptive-moment optimizer.
//!
//! A [`Tape`] is built for one training step: parameters are copied onto it,
//! operations record their inputs, [`Tape::backward`] writes `∂loss/∂param`
//! into the [`ParamStore`] and clears the tape.

mod optim;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use optim::{AdamConfig, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
