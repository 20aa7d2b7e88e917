use alloc::format;
use alloc::vec::Vec;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Mish,
    Silu,
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Mish => tape.mish(x),
            Activation::Silu => tape.silu(x),
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Stack of dense layers `dims[0] -> dims[1] -> ... -> dims[last]`.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    dims: Vec<usize>,
    activation: Activation,
    activate_last: bool,
}

impl Mlp {
    /// Glorot-initialized weights and zero biases; the last layer's weights
    /// are additionally scaled by `last_gain` (0 gives a zero output).
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        activate_last: bool,
        last_gain: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { last_gain } else { 1.0 };
                let w = store.add_glorot(
                    format!("{name}.{i}.weight"),
                    dims[i],
                    dims[i + 1],
                    gain,
                    rng,
                );
                let b = store.add(format!("{name}.{i}.bias"), Tensor::zeros(&[dims[i + 1]]));
                (w, b)
            })
            .collect();
        Mlp {
            layers,
            dims: dims.to_vec(),
            activation,
            activate_last,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty")
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let n = self.layers.len();
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            h = tape.matmul(h, wv)?;
            h = tape.add(h, bv)?;
            if i + 1 < n || self.activate_last {
                h = self.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }
}
