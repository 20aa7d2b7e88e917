//! Conditional normalizing flow built from affine coupling layers.
//!
//! The sampling direction maps base noise `z ~ N(0, I_d)` to `x`; density
//! evaluation runs the inverse. Each layer splits the coordinates into a
//! passive block `A` and a transformed block `B`:
//!
//! ```text
//! x_B = z_B ⊙ exp(s(z_A, c)) + t(z_A, c),   x_A = z_A
//! ```
//!
//! with `s` soft-clamped to `[-clamp, clamp]` through `clamp · tanh(s / clamp)`.
//! Blocks alternate between layers. For `d = 1` there is no passive block and
//! each layer is an affine map of the single coordinate whose shift and
//! log-scale depend on the condition only.

use alloc::format;
use alloc::vec::Vec;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::math::LN_2PI;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub layers: usize,
    pub hidden: usize,
    pub activation: Activation,
    #[serde(default = "default_clamp")]
    pub clamp: f64,
    /// Scale of the coupling subnets' output weights at initialization;
    /// 0 gives the identity flow.
    #[serde(default = "default_output_gain")]
    pub output_gain: f64,
}

fn default_clamp() -> f64 {
    5.0
}

fn default_output_gain() -> f64 {
    0.1
}

impl FlowConfig {
    pub fn new(layers: usize, hidden: usize, activation: Activation) -> Self {
        FlowConfig {
            layers,
            hidden,
            activation,
            clamp: default_clamp(),
            output_gain: default_output_gain(),
        }
    }
}

/// Conditioning input: `var` has one row per distinct condition and each
/// row applies to `repeat` consecutive rows of the flow input.
#[derive(Clone, Copy, Debug)]
pub struct Condition {
    pub var: Option<Var>,
    pub repeat: usize,
}

impl Condition {
    pub fn none() -> Self {
        Condition {
            var: None,
            repeat: 1,
        }
    }

    pub fn rows(var: Var) -> Self {
        Condition {
            var: Some(var),
            repeat: 1,
        }
    }

    pub fn repeated(var: Var, repeat: usize) -> Self {
        Condition {
            var: Some(var),
            repeat,
        }
    }
}

#[derive(Clone, Debug)]
struct Coupling {
    /// Passive block `[start, start + len)`.
    passive: (usize, usize),
    transformed: (usize, usize),
    net: Mlp,
}

#[derive(Clone, Debug)]
pub struct ConditionalFlow {
    dim: usize,
    cond_dim: usize,
    clamp: f64,
    layers: Vec<Coupling>,
}

/// Per-call cache of the condition expanded to one row per input row.
struct Expanded {
    cond: Condition,
    full: Option<Var>,
}

impl Expanded {
    fn full(&mut self, tape: &mut Tape) -> Result<Option<Var>> {
        if self.full.is_none() {
            if let Some(v) = self.cond.var {
                self.full = Some(if self.cond.repeat == 1 {
                    v
                } else {
                    tape.repeat_rows(v, self.cond.repeat)?
                });
            }
        }
        Ok(self.full)
    }
}

impl ConditionalFlow {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cond_dim: usize,
        config: &FlowConfig,
        rng: &mut dyn RngCore,
    ) -> Self {
        let layers = (0..config.layers)
            .map(|i| {
                let (passive, transformed) = if dim == 1 {
                    ((0, 0), (0, 1))
                } else {
                    let first = dim.div_ceil(2);
                    if i % 2 == 0 {
                        ((0, first), (first, dim - first))
                    } else {
                        ((first, dim - first), (0, first))
                    }
                };
                let dims = [
                    passive.1 + cond_dim,
                    config.hidden,
                    config.hidden,
                    2 * transformed.1,
                ];
                let net = Mlp::new(
                    store,
                    &format!("{name}.coupling{i}"),
                    &dims,
                    config.activation,
                    false,
                    config.output_gain,
                    rng,
                );
                Coupling {
                    passive,
                    transformed,
                    net,
                }
            })
            .collect();
        ConditionalFlow {
            dim,
            cond_dim,
            clamp: config.clamp,
            layers,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn check(&self, tape: &Tape, x: Var, cond: &Condition) -> Result<usize> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.dim {
            return Err(Error::shape(
                "flow",
                format!("input {s:?} for a {}-dimensional flow", self.dim),
            ));
        }
        let n = s[0];
        match cond.var {
            None if self.cond_dim > 0 => Err(Error::shape("flow", "missing condition")),
            None => Ok(n),
            Some(c) => {
                let cs = tape.shape(c);
                if cs.len() != 2 || cs[1] != self.cond_dim || cs[0] * cond.repeat != n {
                    return Err(Error::shape(
                        "flow",
                        format!(
                            "condition {cs:?} x{} for {n} rows of width {}",
                            cond.repeat, self.cond_dim
                        ),
                    ));
                }
                Ok(n)
            }
        }
    }

    /// Shift and log-scale of one layer, each `[n, |B|]`.
    fn shift_scale(
        &self,
        layer: &Coupling,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        n: usize,
        cond: &mut Expanded,
    ) -> Result<(Var, Var)> {
        let b = layer.transformed.1;
        let out = if layer.passive.1 == 0 {
            // Parameters depend on the condition only: evaluate once per
            // distinct condition, then repeat.
            let input = match cond.cond.var {
                Some(c) => c,
                None => tape.constant(Tensor::zeros(&[n, 0])),
            };
            let o = layer.net.forward(tape, store, input)?;
            if cond.cond.var.is_some() && cond.cond.repeat > 1 {
                tape.repeat_rows(o, cond.cond.repeat)?
            } else {
                o
            }
        } else {
            let xa = tape.slice(x, 1, layer.passive.0, layer.passive.1)?;
            let input = match cond.full(tape)? {
                Some(c) => tape.concat(&[xa, c], 1)?,
                None => xa,
            };
            layer.net.forward(tape, store, input)?
        };
        let raw = tape.slice(out, 1, 0, b)?;
        let shift = tape.slice(out, 1, b, b)?;
        let scaled = tape.mul_scalar(raw, 1.0 / self.clamp)?;
        let th = tape.tanh(scaled)?;
        let log_scale = tape.mul_scalar(th, self.clamp)?;
        Ok((shift, log_scale))
    }

    fn reassemble(&self, tape: &mut Tape, layer: &Coupling, x: Var, new_b: Var) -> Result<Var> {
        if layer.passive.1 == 0 {
            return Ok(new_b);
        }
        let xa = tape.slice(x, 1, layer.passive.0, layer.passive.1)?;
        if layer.passive.0 == 0 {
            tape.concat(&[xa, new_b], 1)
        } else {
            tape.concat(&[new_b, xa], 1)
        }
    }

    /// `z -> x`; returns `x` and `ln|det ∂x/∂z|` per row.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        cond: Condition,
    ) -> Result<(Var, Var)> {
        let n = self.check(tape, z, &cond)?;
        let mut exp = Expanded { cond, full: None };
        let mut x = z;
        let mut logdet: Option<Var> = None;
        for layer in &self.layers {
            let (shift, log_scale) = self.shift_scale(layer, tape, store, x, n, &mut exp)?;
            let xb = tape.slice(x, 1, layer.transformed.0, layer.transformed.1)?;
            let scale = tape.exp(log_scale)?;
            let scaled = tape.mul(xb, scale)?;
            let yb = tape.add(scaled, shift)?;
            x = self.reassemble(tape, layer, x, yb)?;
            let ld = tape.sum_axis(log_scale, 1)?;
            logdet = Some(match logdet {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
        }
        let logdet = match logdet {
            Some(v) => v,
            None => tape.constant(Tensor::zeros(&[n])),
        };
        Ok((x, logdet))
    }

    /// `x -> z`; returns `z` and `ln|det ∂z/∂x|` per row.
    pub fn inverse(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        cond: Condition,
    ) -> Result<(Var, Var)> {
        let n = self.check(tape, x, &cond)?;
        let mut exp = Expanded { cond, full: None };
        let mut z = x;
        let mut logdet: Option<Var> = None;
        for layer in self.layers.iter().rev() {
            let (shift, log_scale) = self.shift_scale(layer, tape, store, z, n, &mut exp)?;
            let xb = tape.slice(z, 1, layer.transformed.0, layer.transformed.1)?;
            let centered = tape.sub(xb, shift)?;
            let neg = tape.neg(log_scale)?;
            let inv_scale = tape.exp(neg)?;
            let zb = tape.mul(centered, inv_scale)?;
            z = self.reassemble(tape, layer, z, zb)?;
            let ld = tape.sum_axis(neg, 1)?;
            logdet = Some(match logdet {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
        }
        let logdet = match logdet {
            Some(v) => v,
            None => tape.constant(Tensor::zeros(&[n])),
        };
        Ok((z, logdet))
    }

    /// Standard normal log density of each row of `z`.
    pub fn base_log_prob(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let sq = tape.square(z)?;
        let s = tape.sum_axis(sq, 1)?;
        let h = tape.mul_scalar(s, -0.5)?;
        tape.add_scalar(h, -0.5 * self.dim as f64 * LN_2PI)
    }

    /// `ln q(x | c)` per row.
    pub fn log_prob(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        cond: Condition,
    ) -> Result<Var> {
        let (z, logdet) = self.inverse(tape, store, x, cond)?;
        let base = self.base_log_prob(tape, z)?;
        tape.add(base, logdet)
    }

    /// Pushes base draws `z` through the flow; returns the samples and their
    /// log densities computed from the draws' own base log density.
    pub fn sample(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        cond: Condition,
    ) -> Result<(Var, Var)> {
        let (x, logdet) = self.forward(tape, store, z, cond)?;
        let base = self.base_log_prob(tape, z)?;
        let lp = tape.sub(base, logdet)?;
        Ok((x, lp))
    }
}
