//! Reference evidence computations that do not rely on any learned
//! surrogate: Gauss–Legendre quadrature, random-walk Metropolis, Laplace
//! importance sampling and iterative bridge sampling.

mod bridge;
mod gaussian;
mod laplace;
mod mcmc;
mod quadrature;

pub use bridge::{bridge_sampling_log_evidence, BridgeConfig};
pub use gaussian::{MultivariateNormal, MultivariateT};
pub use laplace::{
    find_map, importance_sampling_log_evidence, laplace_is_log_evidence, LaplaceConfig, MapConfig,
};
pub use mcmc::{
    effective_sample_size, metropolis_accept_prob, potential_scale_reduction, rwm_sample,
    McmcChain, RwmConfig,
};
pub use quadrature::{gaussian_quadrature_log_evidence, quadrature_log_evidence};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::models::{Dataset, GenerativeModel};

/// An unnormalized posterior `p(θ) p(y | θ)` on a fixed dataset.
pub trait EvidenceTarget {
    fn dim(&self) -> usize;

    fn log_prior(&self, theta: &[f64]) -> f64;

    fn log_likelihood(&self, theta: &[f64]) -> f64;

    /// `ln p(θ) + ln p(y | θ)`; `−∞` outside the support and for NaN.
    fn log_joint(&self, theta: &[f64]) -> f64 {
        let lp = self.log_prior(theta);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let v = lp + self.log_likelihood(theta);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

/// A model's prior and exact likelihood on one dataset.
#[derive(Clone, Copy)]
pub struct ModelTarget<'a> {
    model: &'a dyn GenerativeModel,
    data: &'a Dataset,
}

impl<'a> ModelTarget<'a> {
    pub fn new(model: &'a dyn GenerativeModel, data: &'a Dataset) -> Result<Self> {
        if model
            .log_likelihood(data, &alloc::vec![0.0; model.param_dim()])
            .is_none()
        {
            return Err(Error::Unsupported(format!(
                "{} has no tractable likelihood",
                model.name()
            )));
        }
        Ok(ModelTarget { model, data })
    }

    pub fn model(&self) -> &'a dyn GenerativeModel {
        self.model
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }
}

impl EvidenceTarget for ModelTarget<'_> {
    fn dim(&self) -> usize {
        self.model.param_dim()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.model.prior_log_density(theta, &self.data.context)
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        self.model
            .log_likelihood(self.data, theta)
            .unwrap_or(f64::NAN)
    }
}

/// Prior and likelihood given as closures.
pub struct FnTarget<P, L> {
    pub dim: usize,
    pub prior: P,
    pub likelihood: L,
}

impl<P, L> EvidenceTarget for FnTarget<P, L>
where
    P: Fn(&[f64]) -> f64,
    L: Fn(&[f64]) -> f64,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        (self.prior)(theta)
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        (self.likelihood)(theta)
    }
}

/// Sample mean and covariance (divisor `n − 1`) of row vectors.
pub(crate) fn moments(draws: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = draws.len();
    let d = draws[0].len();
    let mut mean = alloc::vec![0.0; d];
    for x in draws {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n as f64;
        }
    }
    let mut cov = alloc::vec![0.0; d * d];
    for x in draws {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    cov.iter_mut().for_each(|c| *c /= denom);
    (mean, cov)
}
