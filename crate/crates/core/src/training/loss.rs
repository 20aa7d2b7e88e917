//! Training objectives: the posterior log score, the joint posterior and
//! likelihood score, and the self-consistency variance penalties.
//!
//! Each objective comes in a tape form used for training and a plain-value
//! form that accepts any density implementation, including exact stubs.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::evidence::{LikelihoodDensity, PosteriorDensity};
use crate::math;
use crate::models::{Dataset, GenerativeModel};
use crate::nn::{Classifier, Condition, Encoded, Surrogate};
use crate::tensor::{Tape, Tensor, Var};

fn theta_tensor(thetas: &[Vec<f64>], p: usize) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(thetas.len() * p);
    for (i, t) in thetas.iter().enumerate() {
        if t.len() != p {
            return Err(Error::shape(
                "loss",
                format!("θ {i} has length {}, expected {p}", t.len()),
            ));
        }
        flat.extend_from_slice(t);
    }
    Tensor::new(alloc::vec![thetas.len(), p], flat)
}

/// Pieces of a batch objective on the tape.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    /// `−mean ln q_φ(θ | y)`.
    pub posterior: Var,
    /// `−mean ln q_ψ(y | θ)` when the surrogate carries a likelihood network.
    pub likelihood: Option<Var>,
    pub encoded: Encoded,
}

impl BatchLoss {
    pub fn total(&self, tape: &mut Tape) -> Result<Var> {
        match self.likelihood {
            Some(l) => tape.add(self.posterior, l),
            None => Ok(self.posterior),
        }
    }
}

/// Posterior log score, plus the likelihood log score for a surrogate with
/// a likelihood network.
pub fn batch_loss(
    tape: &mut Tape,
    surrogate: &Surrogate,
    model: &dyn GenerativeModel,
    thetas: &[Vec<f64>],
    data: &[&Dataset],
) -> Result<BatchLoss> {
    if thetas.is_empty() || thetas.len() != data.len() {
        return Err(Error::usage(format!(
            "batch of {} parameters and {} datasets",
            thetas.len(),
            data.len()
        )));
    }
    let store = &surrogate.store;
    let encoded = surrogate
        .posterior
        .encode_datasets(tape, store, model, data)?;
    let theta = tape.constant(theta_tensor(thetas, surrogate.shape.param_dim)?);
    let lq = surrogate.posterior.flow.log_prob(
        tape,
        store,
        theta,
        Condition::rows(encoded.condition),
    )?;
    let mean = tape.mean(lq)?;
    let posterior = tape.neg(mean)?;
    let likelihood = match &surrogate.likelihood {
        Some(net) => {
            let rows: Vec<(Tensor, Tensor)> =
                data.iter().map(|d| model.likelihood_rows(d)).collect();
            let ll = net.log_lik(tape, store, theta, &rows)?;
            let mean = tape.mean(ll)?;
            Some(tape.neg(mean)?)
        }
        None => None,
    };
    Ok(BatchLoss {
        posterior,
        likelihood,
        encoded,
    })
}

/// `mean_b −ln q(θ_b | y_b)` for any posterior density.
pub fn npe_loss(posterior: &dyn PosteriorDensity, batch: &[(Vec<f64>, Dataset)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let mut total = 0.0;
    for (i, (theta, data)) in batch.iter().enumerate() {
        let lq = posterior.log_prob(theta, data)?;
        if !lq.is_finite() {
            return Err(Error::NonFinite(format!(
                "posterior log density {lq} at batch index {i}"
            )));
        }
        total -= lq;
    }
    Ok(total / batch.len() as f64)
}

/// `mean_b [−ln q_φ(θ_b | y_b) − ln q_ψ(y_b | θ_b)]`.
pub fn nlpe_loss(
    posterior: &dyn PosteriorDensity,
    likelihood: &dyn LikelihoodDensity,
    batch: &[(Vec<f64>, Dataset)],
) -> Result<f64> {
    let base = npe_loss(posterior, batch)?;
    let mut total = 0.0;
    for (i, (theta, data)) in batch.iter().enumerate() {
        let ll = likelihood.log_likelihood(data, theta)?;
        if !ll.is_finite() {
            return Err(Error::NonFinite(format!(
                "likelihood log density {ll} at batch index {i}"
            )));
        }
        total -= ll;
    }
    Ok(base + total / batch.len() as f64)
}

/// Per-draw Bayes-identity values `ln p(θ_s) + ln ℓ(y | θ_s) − ln q(θ_s | y)`.
pub fn bayes_identity_terms(
    posterior: &dyn PosteriorDensity,
    model: &dyn GenerativeModel,
    likelihood: &dyn LikelihoodDensity,
    data: &Dataset,
    draws: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let samples = posterior.sample_with_log_prob(data, draws, rng)?;
    let thetas: Vec<Vec<f64>> = samples.iter().map(|(t, _)| t.clone()).collect();
    let lik = likelihood.log_likelihood_batch(data, &thetas)?;
    samples
        .iter()
        .zip(lik)
        .enumerate()
        .map(|(s, ((theta, lq), ll))| {
            let term = model.prior_log_density(theta, &data.context) + ll - lq;
            if term.is_finite() {
                Ok(term)
            } else {
                Err(Error::NonFinite(format!(
                    "self-consistency term {term} for draw {s}"
                )))
            }
        })
        .collect()
}

/// Sample variance (divisor `S − 1`) of the Bayes-identity values over
/// `S` posterior draws for one dataset.
pub fn sc_variance_value(
    posterior: &dyn PosteriorDensity,
    model: &dyn GenerativeModel,
    likelihood: &dyn LikelihoodDensity,
    data: &Dataset,
    draws: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if draws < 2 {
        return Err(Error::Config(format!(
            "self-consistency needs at least 2 draws, got {draws}"
        )));
    }
    let terms = bayes_identity_terms(posterior, model, likelihood, data, draws, rng)?;
    Ok(math::variance(&terms, 1))
}

/// Self-consistency penalty on the tape, averaged over `datasets`.
///
/// `noise` holds `S` base draws per dataset (`[M·S, p]`, dataset-major);
/// draws are pushed through the posterior flow so the penalty is
/// differentiable in the flow and summary parameters. The prior and, for
/// a surrogate without a likelihood network, the exact likelihood enter
/// through their values and gradients in θ.
pub fn sc_variance_term(
    tape: &mut Tape,
    surrogate: &Surrogate,
    model: &dyn GenerativeModel,
    datasets: &[&Dataset],
    noise: Tensor,
    draws: usize,
) -> Result<Var> {
    let m = datasets.len();
    let p = surrogate.shape.param_dim;
    if draws < 2 {
        return Err(Error::Config(format!(
            "self-consistency needs at least 2 draws, got {draws}"
        )));
    }
    if m == 0 || noise.shape() != [m * draws, p] {
        return Err(Error::shape(
            "sc_variance_term",
            format!("noise {:?} for {m} datasets × {draws} draws", noise.shape()),
        ));
    }
    let store = &surrogate.store;
    let enc = surrogate
        .posterior
        .encode_datasets(tape, store, model, datasets)?;
    let z = tape.constant(noise);
    let (theta, lq) = surrogate.posterior.flow.sample(
        tape,
        store,
        z,
        Condition::repeated(enc.condition, draws),
    )?;
    let values = tape.data(theta).to_vec();
    let exact = surrogate.likelihood.is_none();
    let mut joint = Vec::with_capacity(m * draws);
    let mut jac = Vec::with_capacity(m * draws * p);
    for (r, th) in values.chunks(p).enumerate() {
        let data = datasets[r / draws];
        let (mut v, mut g) = model.prior_log_density_grad(th, &data.context);
        if exact {
            let (lv, lg) = model.log_likelihood_grad(data, th).ok_or_else(|| {
                Error::Unsupported(format!("{} has no tractable likelihood", model.name()))
            })?;
            v += lv;
            for (a, b) in g.iter_mut().zip(lg) {
                *a += b;
            }
        }
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "self-consistency term for dataset {} draw {}: {v}",
                r / draws,
                r % draws
            )));
        }
        joint.push(v);
        jac.extend(g);
    }
    let mut log_joint = tape.row_function(theta, joint, jac)?;
    if let Some(net) = &surrogate.likelihood {
        let rows: Vec<(Tensor, Tensor)> = datasets
            .iter()
            .flat_map(|d| {
                let r = model.likelihood_rows(d);
                core::iter::repeat_n(r, draws)
            })
            .collect();
        let ll = net.log_lik(tape, store, theta, &rows)?;
        log_joint = tape.add(log_joint, ll)?;
    }
    let terms = tape.sub(log_joint, lq)?;
    let grouped = tape.reshape(terms, &[m, draws])?;
    let var = tape.variance_axis(grouped, 1, 1)?;
    tape.mean(var)
}

/// Variance over models, weighted by the prior model probabilities, of
/// `ln p(M_k) + ln p(y | M_k) − ln q(M_k | y)`.
pub fn classifier_sc_variance(
    log_q: &[f64],
    log_marginals: &[f64],
    prior_probs: &[f64],
) -> Result<f64> {
    if log_q.len() != log_marginals.len() || log_q.len() != prior_probs.len() || log_q.len() < 2 {
        return Err(Error::usage(
            "classifier self-consistency needs matching vectors over at least two models",
        ));
    }
    let terms: Vec<f64> = (0..log_q.len())
        .map(|k| prior_probs[k].ln() + log_marginals[k] - log_q[k])
        .collect();
    let mean: f64 = terms.iter().zip(prior_probs).map(|(t, w)| t * w).sum();
    Ok(terms
        .iter()
        .zip(prior_probs)
        .map(|(t, w)| w * (t - mean).powi(2))
        .sum())
}

/// Classifier objective on the tape: cross-entropy over the labeled batch
/// plus `lambda` times the mean over `sc_datasets` of the model-wise
/// variance, with uniform weights over the `K` models.
pub struct ClassifierObjective {
    pub total: Var,
    pub cross_entropy: Var,
    pub variance: Option<Var>,
}

#[allow(clippy::too_many_arguments)]
pub fn classifier_sc_objective(
    tape: &mut Tape,
    classifier: &Classifier,
    features: &dyn GenerativeModel,
    labeled: &[(usize, &Dataset)],
    sc_datasets: &[&Dataset],
    log_marginals: &[Vec<f64>],
    prior_probs: &[f64],
    lambda: f64,
) -> Result<ClassifierObjective> {
    let k = classifier.models();
    if k < 2 || prior_probs.len() != k {
        return Err(Error::usage(format!(
            "{k} models with {} prior probabilities",
            prior_probs.len()
        )));
    }
    if labeled.is_empty() {
        return Err(Error::usage("empty labeled batch"));
    }
    let inputs: Vec<Tensor> = labeled
        .iter()
        .map(|(_, d)| features.summary_input(d))
        .collect();
    let extras: Vec<Vec<f64>> = labeled
        .iter()
        .map(|(_, d)| features.condition_extras(d))
        .collect();
    let lp = classifier.log_probs(tape, &inputs, &extras)?;
    let mut onehot = alloc::vec![0.0; labeled.len() * k];
    for (i, (label, _)) in labeled.iter().enumerate() {
        if *label >= k {
            return Err(Error::usage(format!("label {label} for {k} models")));
        }
        onehot[i * k + label] = -1.0 / labeled.len() as f64;
    }
    let mask = tape.constant(Tensor::new(alloc::vec![labeled.len(), k], onehot)?);
    let picked = tape.mul(lp, mask)?;
    let cross_entropy = tape.sum(picked)?;
    if sc_datasets.is_empty() || lambda == 0.0 {
        return Ok(ClassifierObjective {
            total: cross_entropy,
            cross_entropy,
            variance: None,
        });
    }
    if log_marginals.len() != sc_datasets.len() || log_marginals.iter().any(|v| v.len() != k) {
        return Err(Error::Unsupported(
            "a marginal likelihood is required for every model and dataset".into(),
        ));
    }
    let inputs: Vec<Tensor> = sc_datasets
        .iter()
        .map(|d| features.summary_input(d))
        .collect();
    let extras: Vec<Vec<f64>> = sc_datasets
        .iter()
        .map(|d| features.condition_extras(d))
        .collect();
    let lq = classifier.log_probs(tape, &inputs, &extras)?;
    let mut fixed = Vec::with_capacity(sc_datasets.len() * k);
    for lm in log_marginals {
        fixed.extend(lm.iter().zip(prior_probs).map(|(e, p)| e + p.ln()));
    }
    let fixed = tape.constant(Tensor::new(alloc::vec![sc_datasets.len(), k], fixed)?);
    let terms = tape.sub(fixed, lq)?;
    let var = tape.variance_axis(terms, 1, 0)?;
    let variance = tape.mean(var)?;
    let weighted = tape.mul_scalar(variance, lambda)?;
    let total = tape.add(cross_entropy, weighted)?;
    Ok(ClassifierObjective {
        total,
        cross_entropy,
        variance: Some(variance),
    })
}
