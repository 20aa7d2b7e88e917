//! Log marginal likelihood estimates from posterior surrogates, posterior
//! model probabilities and Bayes factors.
//!
//! For any density `q(θ | y)` and every θ in its support,
//! `ln p(y) = ln p(θ) + ln p(y | θ) − ln p(θ | y)`; replacing the true
//! posterior by `q` and averaging over draws from `q` gives the estimators
//! here. With an exact posterior every draw returns the same value.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::models::{Dataset, GenerativeModel};

/// A normalized density over parameters, conditional on a dataset.
pub trait PosteriorDensity {
    fn dim(&self) -> usize;

    /// `count` draws with their log densities.
    fn sample_with_log_prob(
        &self,
        data: &Dataset,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<(Vec<f64>, f64)>>;

    fn log_prob(&self, theta: &[f64], data: &Dataset) -> Result<f64>;
}

/// `ln p(y | θ)`, exact or learned.
pub trait LikelihoodDensity {
    fn log_likelihood_batch(&self, data: &Dataset, thetas: &[Vec<f64>]) -> Result<Vec<f64>>;

    fn log_likelihood(&self, data: &Dataset, theta: &[f64]) -> Result<f64> {
        Ok(self.log_likelihood_batch(data, &[theta.to_vec()])?[0])
    }
}

/// The model's own likelihood.
#[derive(Clone, Copy)]
pub struct ExactLikelihood<'a>(pub &'a dyn GenerativeModel);

impl LikelihoodDensity for ExactLikelihood<'_> {
    fn log_likelihood_batch(&self, data: &Dataset, thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
        thetas
            .iter()
            .map(|t| {
                self.0.log_likelihood(data, t).ok_or_else(|| {
                    Error::Unsupported(format!("{} has no tractable likelihood", self.0.name()))
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub log_ml: f64,
    pub per_draw_terms: Vec<f64>,
    pub mc_std_error: f64,
    pub draws: usize,
    pub method: String,
    /// Draws dropped because they fell outside the likelihood's support.
    pub skipped: usize,
    /// Fixed-point iterations, for iterative estimators.
    pub iterations: Option<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EvidenceEstimate {
    /// Mean of the per-draw terms with its Monte Carlo standard error.
    pub fn from_terms(terms: Vec<f64>, method: &str, skipped: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Estimation(format!(
                "{method}: every draw was skipped"
            )));
        }
        let n = terms.len();
        let log_ml = math::mean(&terms);
        let mc_std_error = if n > 1 {
            (math::variance(&terms, 1) / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(EvidenceEstimate {
            log_ml,
            per_draw_terms: terms,
            mc_std_error,
            draws: n + skipped,
            method: method.to_string(),
            skipped,
            iterations: None,
            warnings: Vec::new(),
        })
    }

    /// Largest minus smallest per-draw term.
    pub fn spread(&self) -> f64 {
        let max = self
            .per_draw_terms
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = self
            .per_draw_terms
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// `ln p(θ_s) + ln ℓ(y | θ_s) − ln q(θ_s | y)` over `draws` posterior draws.
/// Draws with zero likelihood are skipped and counted.
pub fn estimate_log_ml(
    posterior: &dyn PosteriorDensity,
    model: &dyn GenerativeModel,
    likelihood: &dyn LikelihoodDensity,
    data: &Dataset,
    draws: usize,
    method: &str,
    rng: &mut dyn RngCore,
) -> Result<EvidenceEstimate> {
    if draws == 0 {
        return Err(Error::usage("evidence estimation needs at least one draw"));
    }
    let samples = posterior.sample_with_log_prob(data, draws, rng)?;
    let thetas: Vec<Vec<f64>> = samples.iter().map(|(t, _)| t.clone()).collect();
    let lik = likelihood.log_likelihood_batch(data, &thetas)?;
    let mut terms = Vec::with_capacity(draws);
    let mut skipped = 0;
    for (s, ((theta, lq), ll)) in samples.iter().zip(lik).enumerate() {
        let lp = model.prior_log_density(theta, &data.context);
        if ll == f64::NEG_INFINITY || lp == f64::NEG_INFINITY {
            skipped += 1;
            continue;
        }
        let term = lp + ll - lq;
        if !term.is_finite() {
            return Err(Error::NonFinite(format!(
                "{method} evidence term for draw {s}: {term}"
            )));
        }
        terms.push(term);
    }
    EvidenceEstimate::from_terms(terms, method, skipped)
}

/// Surrogate posterior with the model's exact likelihood.
pub fn estimate_log_ml_npe(
    posterior: &dyn PosteriorDensity,
    model: &dyn GenerativeModel,
    data: &Dataset,
    draws: usize,
    rng: &mut dyn RngCore,
) -> Result<EvidenceEstimate> {
    estimate_log_ml(
        posterior,
        model,
        &ExactLikelihood(model),
        data,
        draws,
        "npe",
        rng,
    )
}

/// Surrogate posterior with a learned likelihood.
pub fn estimate_log_ml_nlpe(
    posterior: &dyn PosteriorDensity,
    likelihood: &dyn LikelihoodDensity,
    model: &dyn GenerativeModel,
    data: &Dataset,
    draws: usize,
    rng: &mut dyn RngCore,
) -> Result<EvidenceEstimate> {
    estimate_log_ml(posterior, model, likelihood, data, draws, "nlpe", rng)
}

/// `p(M_k | y)` from log evidences and prior model probabilities.
pub fn pmps_from_evidences(log_evidences: &[f64], prior_probs: &[f64]) -> Result<Vec<f64>> {
    if log_evidences.len() != prior_probs.len() || log_evidences.is_empty() {
        return Err(Error::usage(format!(
            "{} evidences with {} priors",
            log_evidences.len(),
            prior_probs.len()
        )));
    }
    let total: f64 = prior_probs.iter().sum();
    if prior_probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::usage(format!(
            "prior model probabilities must be nonnegative and sum to 1, got {prior_probs:?}"
        )));
    }
    if log_evidences
        .iter()
        .any(|v| v.is_nan() || *v == f64::INFINITY)
    {
        return Err(Error::NonFinite(format!("log evidences {log_evidences:?}")));
    }
    let scores: Vec<f64> = log_evidences
        .iter()
        .zip(prior_probs)
        .map(|(e, p)| e + p.ln())
        .collect();
    let lse = math::log_sum_exp(&scores);
    if lse == f64::NEG_INFINITY {
        return Err(Error::Degenerate(
            "every model has zero posterior weight".into(),
        ));
    }
    Ok(scores.iter().map(|s| (s - lse).exp()).collect())
}

/// Uniform prior over `k` models.
pub fn uniform_prior(k: usize) -> Vec<f64> {
    alloc::vec![1.0 / k as f64; k]
}

/// `ln BF_ab = ln p(y | M_a) − ln p(y | M_b)`.
pub fn log_bayes_factor(log_ml_a: f64, log_ml_b: f64) -> f64 {
    log_ml_a - log_ml_b
}

pub fn bayes_factor(log_ml_a: f64, log_ml_b: f64) -> f64 {
    log_bayes_factor(log_ml_a, log_ml_b).exp()
}

/// Model probabilities from a trained classifier.
pub fn classifier_pmps(
    classifier: &crate::nn::Classifier,
    features: &dyn GenerativeModel,
    data: &Dataset,
) -> Result<Vec<f64>> {
    classifier.pmps(features, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ConjugatePosterior, GaussianLocationModel};
    use crate::rng;
    use alloc::vec;

    #[test]
    fn pmps_examples() {
        assert_eq!(
            pmps_from_evidences(&[1.0, 1.0], &uniform_prior(2)).unwrap(),
            vec![0.5, 0.5]
        );
        let p = pmps_from_evidences(&[3.0f64.ln(), 0.0], &uniform_prior(2)).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn pmps_reject_bad_priors_and_degenerate_evidence() {
        assert!(matches!(
            pmps_from_evidences(&[0.0, 0.0], &[0.7, 0.7]),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            pmps_from_evidences(&[f64::NEG_INFINITY, f64::NEG_INFINITY], &uniform_prior(2)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn single_draw_estimate_is_the_term() {
        let e = EvidenceEstimate::from_terms(vec![-3.25], "npe", 0).unwrap();
        assert_eq!(e.log_ml, -3.25);
        assert_eq!(e.mc_std_error, 0.0);
    }

    #[test]
    fn all_skipped_is_an_estimation_failure() {
        assert!(matches!(
            EvidenceEstimate::from_terms(vec![], "npe", 4),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn exact_posterior_recovers_evidence_for_any_draw_count() {
        let model = GaussianLocationModel::fixed(2, 7, 1.0);
        let post = ConjugatePosterior {
            model: model.clone(),
        };
        let mut r = rng::stream(8, &[]);
        let (_, data) = model.sample_joint(&mut r).unwrap();
        let truth = model.log_evidence(&data);
        for s in [1, 5, 64] {
            let e = estimate_log_ml_npe(&post, &model, &data, s, &mut r).unwrap();
            assert!((e.log_ml - truth).abs() < 1e-8);
            assert!(e.spread() < 1e-8);
        }
    }
}
