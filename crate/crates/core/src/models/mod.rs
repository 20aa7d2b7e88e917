//! Candidate model families: priors on an unconstrained parameter vector,
//! simulators, exact likelihoods where tractable and analytic evidences
//! where available.

mod ar;
mod gaussian;
mod ood;
mod race;

pub use ar::{simulate_ar, synthetic_covariates, ArCoefficients, ArModel, ArVariant, AR_STEPS};
pub use gaussian::{ConjugatePosterior, GaussianLocationModel, PriorScale};
pub use ood::{make_ood_datasets, OodSpec};
pub use race::{
    first_passage_log_pdf, first_passage_log_survival, wald_race_log_density, RaceParams,
    RaceVariant, RacingDiffusionModel, ACCURACY, SPEED,
};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// An observed or simulated dataset: a row-major `rows × cols` table plus
/// optional dataset-level context scalars (e.g. `ln σ_μ²`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    #[serde(default)]
    pub context: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                "dataset",
                alloc::format!("{rows}x{cols} vs {} values", data.len()),
            ));
        }
        Ok(Dataset {
            rows,
            cols,
            data,
            context: Vec::new(),
        })
    }

    pub fn with_context(mut self, context: Vec<f64>) -> Self {
        self.context = context;
        self
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.data[i * self.cols + j])
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.cols], self.data.clone()).expect("consistent dataset")
    }

    /// Dataset with rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Dataset {
            rows: self.rows,
            cols: self.cols,
            data,
            context: self.context.clone(),
        }
    }
}

/// Map from an unconstrained coordinate to its natural scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    Log,
    Logit,
}

impl Transform {
    pub fn to_natural(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit => math::sigmoid(u),
        }
    }

    pub fn to_unconstrained(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logit => math::logit(x),
        }
    }

    /// `ln |du/dx|` at natural-scale value `x`: the term that turns a density
    /// over the unconstrained coordinate into one over the natural scale.
    pub fn log_abs_det_to_natural(self, x: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => -x.ln(),
            Transform::Logit => -(x.ln() + (1.0 - x).ln()),
        }
    }
}

/// A candidate model `M_k`. Parameters live on the unconstrained scale given
/// by [`GenerativeModel::transforms`]; all densities are over that scale.
pub trait GenerativeModel: Send + Sync {
    fn name(&self) -> &str;

    fn param_names(&self) -> Vec<String>;

    fn param_dim(&self) -> usize {
        self.param_names().len()
    }

    fn transforms(&self) -> Vec<Transform>;

    /// Draws dataset-level context (empty for most models).
    fn sample_context(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        Vec::new()
    }

    fn sample_prior(&self, context: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    fn prior_log_density(&self, theta: &[f64], context: &[f64]) -> f64;

    fn prior_log_density_grad(&self, theta: &[f64], context: &[f64]) -> (f64, Vec<f64>) {
        let v = self.prior_log_density(theta, context);
        (
            v,
            central_difference(theta, |t| self.prior_log_density(t, context)),
        )
    }

    /// Natural-scale prior log density including the change-of-variables terms.
    fn natural_prior_log_density(&self, natural: &[f64], context: &[f64]) -> f64 {
        let tr = self.transforms();
        let theta: Vec<f64> = tr
            .iter()
            .zip(natural)
            .map(|(t, &x)| t.to_unconstrained(x))
            .collect();
        let jac: f64 = tr
            .iter()
            .zip(natural)
            .map(|(t, &x)| t.log_abs_det_to_natural(x))
            .sum();
        self.prior_log_density(&theta, context) + jac
    }

    fn simulate(&self, theta: &[f64], context: &[f64], rng: &mut dyn RngCore) -> Result<Dataset>;

    /// Draws `(θ, y)` from the joint prior predictive.
    fn sample_joint(&self, rng: &mut dyn RngCore) -> Result<(Vec<f64>, Dataset)> {
        let ctx = self.sample_context(rng);
        let theta = self.sample_prior(&ctx, rng);
        let data = self.simulate(&theta, &ctx, rng)?;
        Ok((theta, data))
    }

    /// Exact `ln p(y | θ)`; `None` when intractable, `-∞` outside the support.
    fn log_likelihood(&self, data: &Dataset, theta: &[f64]) -> Option<f64>;

    fn log_likelihood_grad(&self, data: &Dataset, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let v = self.log_likelihood(data, theta)?;
        let g = central_difference(theta, |t| self.log_likelihood(data, t).unwrap_or(f64::NAN));
        Some((v, g))
    }

    fn analytic_log_evidence(&self, _data: &Dataset) -> Option<f64> {
        None
    }

    /// Per-row features fed to the summary network.
    fn summary_input(&self, data: &Dataset) -> Tensor {
        data.as_tensor()
    }

    fn summary_input_dim(&self) -> usize;

    /// Dataset-level conditions concatenated to the learned summary.
    fn condition_extras(&self, data: &Dataset) -> Vec<f64> {
        data.context.clone()
    }

    fn extras_dim(&self) -> usize {
        0
    }

    /// Per-observation targets and row contexts for a factorized likelihood
    /// surrogate: `([n, target_dim], [n, row_context_dim])`.
    fn likelihood_rows(&self, data: &Dataset) -> (Tensor, Tensor) {
        (data.as_tensor(), Tensor::zeros(&[data.rows, 0]))
    }

    fn likelihood_target_dim(&self) -> usize;

    fn likelihood_row_context_dim(&self) -> usize {
        0
    }
}

/// Central finite-difference gradient with step `1e-5 · (1 + |θᵢ|)`.
pub fn central_difference(theta: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let h = 1e-5 * (1.0 + theta[i].abs());
            t[i] = theta[i] + h;
            let up = f(&t);
            t[i] = theta[i] - h;
            let down = f(&t);
            t[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_invert() {
        for (t, x) in [
            (Transform::Identity, -1.3),
            (Transform::Log, 2.5),
            (Transform::Logit, 0.3),
        ] {
            let u = t.to_unconstrained(x);
            assert!((t.to_natural(u) - x).abs() < 1e-14);
        }
    }
}
