use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, GenerativeModel, Transform};
use crate::error::{Error, Result};
use crate::evidence::PosteriorDensity;
use crate::math::{self, LN_2PI};

/// Prior variance `σ_μ²` of the location, fixed or drawn per dataset as
/// `ln σ_μ² ~ Uniform(low, high)` and passed along as context.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorScale {
    Fixed { variance: f64 },
    Randomized { low: f64, high: f64 },
}

/// `μ ~ N(0, σ_μ² I_D)`, `y_i ~ N(μ, σ_y² I_D)` for `i = 1..N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLocationModel {
    pub dim: usize,
    pub n_obs: usize,
    pub prior: PriorScale,
    pub sigma_y: f64,
}

impl GaussianLocationModel {
    pub fn new(dim: usize, n_obs: usize, prior: PriorScale) -> Self {
        GaussianLocationModel {
            dim,
            n_obs,
            prior,
            sigma_y: 1.0,
        }
    }

    pub fn fixed(dim: usize, n_obs: usize, prior_variance: f64) -> Self {
        Self::new(
            dim,
            n_obs,
            PriorScale::Fixed {
                variance: prior_variance,
            },
        )
    }

    /// `σ_μ²` for a dataset context.
    pub fn prior_variance(&self, context: &[f64]) -> f64 {
        match self.prior {
            PriorScale::Fixed { variance } => variance,
            PriorScale::Randomized { .. } => context.first().copied().unwrap_or(0.0).exp(),
        }
    }

    /// Context used for test and self-consistency datasets: `σ_μ² = 1`.
    pub fn reference_context(&self) -> Vec<f64> {
        match self.prior {
            PriorScale::Fixed { .. } => Vec::new(),
            PriorScale::Randomized { .. } => alloc::vec![0.0],
        }
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.cols != self.dim {
            return Err(Error::shape(
                "gaussian",
                format!("{} columns, model has D={}", data.cols, self.dim),
            ));
        }
        Ok(())
    }

    /// Exact conjugate posterior `(means, sd)`; the sd is shared by all dimensions.
    pub fn posterior(&self, data: &Dataset) -> (Vec<f64>, f64) {
        let v0 = self.prior_variance(&data.context);
        let s2 = self.sigma_y * self.sigma_y;
        let precision = 1.0 / v0 + data.rows as f64 / s2;
        let means = (0..self.dim)
            .map(|d| data.column(d).sum::<f64>() / s2 / precision)
            .collect();
        (means, (1.0 / precision).sqrt())
    }

    /// Observations in dimension `d` are jointly `N(0, σ_y² I + σ_μ² 11ᵀ)`
    /// and the evidence factorizes over dimensions.
    pub fn log_evidence(&self, data: &Dataset) -> f64 {
        let v0 = self.prior_variance(&data.context);
        let s2 = self.sigma_y * self.sigma_y;
        let n = data.rows as f64;
        (0..self.dim)
            .map(|d| {
                let (s, q) = data
                    .column(d)
                    .fold((0.0, 0.0), |(s, q), y| (s + y, q + y * y));
                -0.5 * n * LN_2PI
                    - 0.5 * n * s2.ln()
                    - 0.5 * (1.0 + n * v0 / s2).ln()
                    - 0.5 * (q / s2 - v0 * s * s / (s2 * (s2 + n * v0)))
            })
            .sum()
    }
}

impl GenerativeModel for GaussianLocationModel {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.dim).map(|d| format!("mu[{d}]")).collect()
    }

    fn transforms(&self) -> Vec<Transform> {
        alloc::vec![Transform::Identity; self.dim]
    }

    fn sample_context(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        match self.prior {
            PriorScale::Fixed { .. } => Vec::new(),
            PriorScale::Randomized { low, high } => alloc::vec![rng.random_range(low..high)],
        }
    }

    fn sample_prior(&self, context: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let sd = self.prior_variance(context).sqrt();
        (0..self.dim)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn prior_log_density(&self, theta: &[f64], context: &[f64]) -> f64 {
        let sd = self.prior_variance(context).sqrt();
        theta
            .iter()
            .map(|&m| math::normal_log_pdf(m, 0.0, sd))
            .sum()
    }

    fn prior_log_density_grad(&self, theta: &[f64], context: &[f64]) -> (f64, Vec<f64>) {
        let v0 = self.prior_variance(context);
        (
            self.prior_log_density(theta, context),
            theta.iter().map(|m| -m / v0).collect(),
        )
    }

    fn simulate(&self, theta: &[f64], context: &[f64], rng: &mut dyn RngCore) -> Result<Dataset> {
        if theta.len() != self.dim {
            return Err(Error::shape(
                "gaussian simulate",
                format!("θ has {} entries", theta.len()),
            ));
        }
        let mut data = Vec::with_capacity(self.n_obs * self.dim);
        for _ in 0..self.n_obs {
            for &m in theta {
                data.push(m + self.sigma_y * rng.sample::<f64, _>(StandardNormal));
            }
        }
        Ok(Dataset::new(self.n_obs, self.dim, data)?.with_context(context.to_vec()))
    }

    fn log_likelihood(&self, data: &Dataset, theta: &[f64]) -> Option<f64> {
        self.check(data).ok()?;
        let mut total = 0.0;
        for i in 0..data.rows {
            for (y, &m) in data.row(i).iter().zip(theta) {
                total += math::normal_log_pdf(*y, m, self.sigma_y);
            }
        }
        Some(total)
    }

    fn log_likelihood_grad(&self, data: &Dataset, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let v = self.log_likelihood(data, theta)?;
        let s2 = self.sigma_y * self.sigma_y;
        let g = (0..self.dim)
            .map(|d| data.column(d).map(|y| (y - theta[d]) / s2).sum())
            .collect();
        Some((v, g))
    }

    fn analytic_log_evidence(&self, data: &Dataset) -> Option<f64> {
        self.check(data).ok()?;
        Some(self.log_evidence(data))
    }

    fn summary_input_dim(&self) -> usize {
        self.dim
    }

    fn extras_dim(&self) -> usize {
        match self.prior {
            PriorScale::Fixed { .. } => 0,
            PriorScale::Randomized { .. } => 1,
        }
    }

    fn likelihood_target_dim(&self) -> usize {
        self.dim
    }
}

/// The exact posterior of a [`GaussianLocationModel`], usable wherever a
/// trained posterior surrogate is expected.
#[derive(Clone, Debug)]
pub struct ConjugatePosterior {
    pub model: GaussianLocationModel,
}

impl PosteriorDensity for ConjugatePosterior {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn sample_with_log_prob(
        &self,
        data: &Dataset,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<(Vec<f64>, f64)>> {
        let (means, sd) = self.model.posterior(data);
        Ok((0..count)
            .map(|_| {
                let z: Vec<f64> = means
                    .iter()
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let theta: Vec<f64> = means.iter().zip(&z).map(|(m, z)| m + sd * z).collect();
                let lp = theta
                    .iter()
                    .zip(&means)
                    .map(|(t, m)| math::normal_log_pdf(*t, *m, sd))
                    .sum();
                (theta, lp)
            })
            .collect())
    }

    fn log_prob(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        let (means, sd) = self.model.posterior(data);
        Ok(theta
            .iter()
            .zip(&means)
            .map(|(t, m)| math::normal_log_pdf(*t, *m, sd))
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn single_observation_closed_form() {
        let m = GaussianLocationModel::fixed(1, 1, 1.0);
        let zero = Dataset::new(1, 1, alloc::vec![0.0]).unwrap();
        let five = Dataset::new(1, 1, alloc::vec![5.0]).unwrap();
        let base = -0.5 * (4.0 * core::f64::consts::PI).ln();
        assert!((m.log_evidence(&zero) - base).abs() < 1e-12);
        assert!((m.log_evidence(&zero) - (-1.265_512_123_484_645_4)).abs() < 1e-12);
        assert!((m.log_evidence(&five) - (base - 25.0 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn bayes_identity_holds_for_any_theta() {
        let m = GaussianLocationModel::fixed(3, 7, 2.0);
        let mut r = rng::stream(3, &[0]);
        let (_, data) = m.sample_joint(&mut r).unwrap();
        let post = ConjugatePosterior { model: m.clone() };
        let truth = m.log_evidence(&data);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..100 {
            let theta: Vec<f64> = (0..3)
                .map(|_| 3.0 * r.sample::<f64, _>(StandardNormal))
                .collect();
            let v = m.prior_log_density(&theta, &[]) + m.log_likelihood(&data, &theta).unwrap()
                - post.log_prob(&theta, &data).unwrap();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(hi - lo < 1e-8, "spread {}", hi - lo);
        assert!((lo - truth).abs() < 1e-8);
    }

    #[test]
    fn randomized_prior_carries_context() {
        let m = GaussianLocationModel::new(
            2,
            5,
            PriorScale::Randomized {
                low: -3.0,
                high: 3.0,
            },
        );
        let mut r = rng::stream(1, &[0]);
        let (theta, data) = m.sample_joint(&mut r).unwrap();
        assert_eq!(data.context.len(), 1);
        assert!(data.context[0] > -3.0 && data.context[0] < 3.0);
        assert!(m.prior_log_density(&theta, &data.context).is_finite());
        assert_eq!(m.condition_extras(&data), data.context);
        assert_eq!(data.rows, 5);
        assert_eq!(data.cols, 2);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let m = GaussianLocationModel::fixed(2, 4, 1.5);
        let mut r = rng::stream(5, &[0]);
        let (theta, data) = m.sample_joint(&mut r).unwrap();
        let (_, g) = m.log_likelihood_grad(&data, &theta).unwrap();
        let fd = super::super::central_difference(&theta, |t| m.log_likelihood(&data, t).unwrap());
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
