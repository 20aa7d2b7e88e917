//! Learned dataset summaries: a permutation-invariant deep set for
//! exchangeable rows and a gated recurrent encoder for ordered sequences.
//!
//! Inputs are stacked as `[B·n, f]`: `B` datasets of `n` rows each, rows of
//! one dataset contiguous.

use alloc::format;
use alloc::vec::Vec;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SummaryConfig {
    DeepSet {
        hidden: usize,
        #[serde(default = "default_equivariant")]
        equivariant_modules: usize,
        output: usize,
    },
    Recurrent {
        hidden: usize,
        dense: usize,
        output: usize,
    },
}

fn default_equivariant() -> usize {
    2
}

impl SummaryConfig {
    pub fn output_dim(&self) -> usize {
        match self {
            SummaryConfig::DeepSet { output, .. } | SummaryConfig::Recurrent { output, .. } => {
                *output
            }
        }
    }
}

/// Row-wise inner network, mean pool over each dataset's rows, outer network.
#[derive(Clone, Debug)]
struct Invariant {
    inner: Mlp,
    outer: Mlp,
}

impl Invariant {
    fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let act = Activation::Silu;
        Invariant {
            inner: Mlp::new(
                store,
                &format!("{name}.inner"),
                &[input, hidden, hidden],
                act,
                true,
                1.0,
                rng,
            ),
            outer: Mlp::new(
                store,
                &format!("{name}.outer"),
                &[hidden, hidden, hidden],
                act,
                true,
                1.0,
                rng,
            ),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, n: usize) -> Result<Var> {
        let h = self.inner.forward(tape, store, x)?;
        let width = self.inner.output_dim();
        let b = tape.shape(h)[0] / n;
        let grouped = tape.reshape(h, &[b, n, width])?;
        let pooled = tape.mean_axis(grouped, 1)?;
        self.outer.forward(tape, store, pooled)
    }
}

/// Per-row network on the row concatenated with its dataset's invariant code.
#[derive(Clone, Debug)]
struct Equivariant {
    invariant: Invariant,
    net: Mlp,
}

impl Equivariant {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, n: usize) -> Result<Var> {
        let code = self.invariant.forward(tape, store, x, n)?;
        let spread = tape.repeat_rows(code, n)?;
        let joined = tape.concat(&[x, spread], 1)?;
        self.net.forward(tape, store, joined)
    }
}

#[derive(Clone, Debug)]
struct Gru {
    input_weight: ParamId,
    hidden_weight: ParamId,
    input_bias: ParamId,
    hidden_bias: ParamId,
    hidden: usize,
}

impl Gru {
    fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        Gru {
            input_weight: store.add_glorot(format!("{name}.wx"), input, 3 * hidden, 1.0, rng),
            hidden_weight: store.add_glorot(format!("{name}.wh"), hidden, 3 * hidden, 1.0, rng),
            input_bias: store.add(format!("{name}.bx"), Tensor::zeros(&[3 * hidden])),
            hidden_bias: store.add(format!("{name}.bh"), Tensor::zeros(&[3 * hidden])),
            hidden,
        }
    }

    /// Final hidden state `[B, hidden]` after reading `n` steps.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, n: usize) -> Result<Var> {
        let f = tape.shape(x)[1];
        let b = tape.shape(x)[0] / n;
        let seq = tape.reshape(x, &[b, n * f])?;
        let wx = tape.param(store, self.input_weight);
        let wh = tape.param(store, self.hidden_weight);
        let bx = tape.param(store, self.input_bias);
        let bh = tape.param(store, self.hidden_bias);
        let k = self.hidden;
        let mut h = tape.constant(Tensor::zeros(&[b, k]));
        for t in 0..n {
            let xt = tape.slice(seq, 1, t * f, f)?;
            let gx = tape.matmul(xt, wx)?;
            let gx = tape.add(gx, bx)?;
            let gh = tape.matmul(h, wh)?;
            let gh = tape.add(gh, bh)?;
            let rx = tape.slice(gx, 1, 0, k)?;
            let rh = tape.slice(gh, 1, 0, k)?;
            let r = tape.add(rx, rh)?;
            let r = tape.sigmoid(r)?;
            let zx = tape.slice(gx, 1, k, k)?;
            let zh = tape.slice(gh, 1, k, k)?;
            let z = tape.add(zx, zh)?;
            let z = tape.sigmoid(z)?;
            let nx = tape.slice(gx, 1, 2 * k, k)?;
            let nh = tape.slice(gh, 1, 2 * k, k)?;
            let gated = tape.mul(r, nh)?;
            let cand = tape.add(nx, gated)?;
            let cand = tape.tanh(cand)?;
            // h' = cand + z ⊙ (h − cand)
            let diff = tape.sub(h, cand)?;
            let keep = tape.mul(z, diff)?;
            h = tape.add(cand, keep)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
enum Body {
    DeepSet {
        equivariant: Vec<Equivariant>,
        invariant: Invariant,
        output: Mlp,
    },
    Recurrent {
        gru: Gru,
        dense: Mlp,
    },
}

#[derive(Clone, Debug)]
pub struct SummaryNet {
    input_dim: usize,
    output_dim: usize,
    body: Body,
}

impl SummaryNet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        config: &SummaryConfig,
        rng: &mut dyn RngCore,
    ) -> Self {
        let body = match *config {
            SummaryConfig::DeepSet {
                hidden,
                equivariant_modules,
                output,
            } => {
                let mut width = input_dim;
                let equivariant = (0..equivariant_modules)
                    .map(|i| {
                        let invariant =
                            Invariant::new(store, &format!("{name}.eq{i}.inv"), width, hidden, rng);
                        let net = Mlp::new(
                            store,
                            &format!("{name}.eq{i}.net"),
                            &[width + hidden, hidden, hidden],
                            Activation::Silu,
                            true,
                            1.0,
                            rng,
                        );
                        width = hidden;
                        Equivariant { invariant, net }
                    })
                    .collect();
                let invariant = Invariant::new(store, &format!("{name}.inv"), width, hidden, rng);
                let output = Mlp::new(
                    store,
                    &format!("{name}.out"),
                    &[hidden, output],
                    Activation::Identity,
                    false,
                    1.0,
                    rng,
                );
                Body::DeepSet {
                    equivariant,
                    invariant,
                    output,
                }
            }
            SummaryConfig::Recurrent {
                hidden,
                dense,
                output,
            } => {
                let gru = Gru::new(store, &format!("{name}.gru"), input_dim, hidden, rng);
                let dense = Mlp::new(
                    store,
                    &format!("{name}.dense"),
                    &[hidden, dense, output],
                    Activation::Silu,
                    false,
                    1.0,
                    rng,
                );
                Body::Recurrent { gru, dense }
            }
        };
        SummaryNet {
            input_dim,
            output_dim: config.output_dim(),
            body,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Summaries `[B, output]` of `B` datasets with `n` rows each.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, n: usize) -> Result<Var> {
        let s = tape.shape(x);
        if n == 0 || s.len() != 2 || s[0] == 0 {
            return Err(Error::usage("summary network needs a non-empty dataset"));
        }
        if s[1] != self.input_dim || !s[0].is_multiple_of(n) {
            return Err(Error::shape(
                "summary",
                format!(
                    "input {s:?} with {n} rows per dataset, expected width {}",
                    self.input_dim
                ),
            ));
        }
        match &self.body {
            Body::DeepSet {
                equivariant,
                invariant,
                output,
            } => {
                let mut h = x;
                for m in equivariant {
                    h = m.forward(tape, store, h, n)?;
                }
                let code = invariant.forward(tape, store, h, n)?;
                output.forward(tape, store, code)
            }
            Body::Recurrent { gru, dense } => {
                let h = gru.forward(tape, store, x, n)?;
                dense.forward(tape, store, h)
            }
        }
    }

    /// Convenience: summary of one dataset given as a row-major tensor.
    pub fn summarize(&self, store: &ParamStore, data: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let n = data.shape().first().copied().unwrap_or(0);
        let x = tape.constant(data.clone());
        let out = self.forward(&mut tape, store, x, n)?;
        Ok(tape.data(out).to_vec())
    }
}
