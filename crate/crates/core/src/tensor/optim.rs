use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Option<Vec<f64>>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named parameters with their gradients and Adam moment accumulators.
#[derive(Clone, Debug)]
pub struct ParamStore {
    params: Vec<Param>,
    l2: f64,
    adam: AdamConfig,
    step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new(0.0)
    }
}

impl ParamStore {
    pub fn new(l2: f64) -> Self {
        ParamStore {
            params: Vec::new(),
            l2: l2.max(0.0),
            adam: AdamConfig::default(),
            step: 0,
        }
    }

    pub fn with_adam(mut self, adam: AdamConfig) -> Self {
        self.adam = adam;
        self
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn set_l2(&mut self, l2: f64) {
        self.l2 = l2.max(0.0);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let n = value.numel();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform `[fan_in, fan_out]` weight matrix scaled by `gain`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut dyn RngCore,
    ) -> ParamId {
        let limit = gain * (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        self.add(
            name,
            Tensor::new(vec![fan_in, fan_out], data).expect("consistent shape"),
        )
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.0].grad.as_deref()
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Vec<f64>) {
        self.params[id.0].grad = Some(grad);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// Replaces every parameter value; names and shapes must match in order.
    pub fn load_values<'a>(
        &mut self,
        values: impl IntoIterator<Item = (&'a str, Tensor)>,
    ) -> Result<()> {
        let mut count = 0;
        for (i, (name, t)) in values.into_iter().enumerate() {
            let p = self
                .params
                .get_mut(i)
                .ok_or_else(|| Error::usage(format!("unexpected parameter {name}")))?;
            if p.name != name || p.value.shape() != t.shape() {
                return Err(Error::usage(format!(
                    "parameter {i}: expected {} {:?}, found {name} {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
            p.value = t;
            count += 1;
        }
        if count != self.params.len() {
            return Err(Error::usage(format!(
                "expected {} parameters, found {count}",
                self.params.len()
            )));
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// One bias-corrected Adam update; the L2 penalty enters as
    /// `l2 · parameter` added to each gradient. Gradients are consumed.
    pub fn step(&mut self, learning_rate: f64) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::usage(format!(
                "missing gradient for parameter {}",
                p.name
            )));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let l2 = self.l2;
        for p in &mut self.params {
            let g = p.grad.take().expect("checked above");
            let w = p.value.data_mut();
            for k in 0..w.len() {
                let gk = g[k] + l2 * w[k];
                p.m[k] = beta1 * p.m[k] + (1.0 - beta1) * gk;
                p.v[k] = beta2 * p.v[k] + (1.0 - beta2) * gk * gk;
                let mh = p.m[k] / c1;
                let vh = p.v[k] / c2;
                w[k] -= learning_rate * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
