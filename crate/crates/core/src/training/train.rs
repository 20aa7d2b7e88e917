use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::seq::index;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{batch_loss, classifier_sc_objective, sc_variance_term};
use super::schedule::WarmupSchedule;
use crate::error::{Error, Result};
use crate::math;
use crate::models::{Dataset, GenerativeModel};
use crate::nn::{mmd_penalty, standard_normal_tensor, Classifier, Surrogate};
use crate::rng::{self, stage};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    /// Fresh simulations every step.
    Online,
    /// A fixed table of `simulation_budget` simulations drawn once.
    Offline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub mode: SimulationMode,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_budget")]
    pub simulation_budget: usize,
    /// Adds the summary-space MMD penalty with weight 1.
    #[serde(default)]
    pub mmd: bool,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

/// Learning rate over the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero over all steps.
    Cosine,
}

fn default_budget() -> usize {
    1024
}

impl TrainingConfig {
    /// Rate for the 1-based `epoch` and 0-based `step` within it.
    pub fn learning_rate_at(&self, epoch: usize, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let total = (self.epochs * self.steps_per_epoch) as f64;
                let t = ((epoch - 1) * self.steps_per_epoch + step) as f64;
                0.5 * self.learning_rate * (1.0 + (core::f64::consts::PI * t / total).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs, steps per epoch and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if self.mode == SimulationMode::Offline && self.simulation_budget == 0 {
            return Err(Error::Config(
                "offline training needs a positive simulation budget".into(),
            ));
        }
        if self.mmd && self.batch_size < 2 {
            return Err(Error::Config(
                "the MMD penalty needs batches of at least two".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScConfig {
    pub schedule: WarmupSchedule,
    /// Posterior draws per dataset inside the variance.
    #[serde(default = "default_draws")]
    pub draws: usize,
    /// Datasets used per step; more are subsampled without replacement.
    #[serde(default = "default_max_datasets")]
    pub max_datasets_per_step: usize,
}

fn default_draws() -> usize {
    16
}

fn default_max_datasets() -> usize {
    32
}

impl ScConfig {
    pub fn new(schedule: WarmupSchedule) -> Self {
        ScConfig {
            schedule,
            draws: default_draws(),
            max_datasets_per_step: default_max_datasets(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.draws < 2 {
            return Err(Error::Config(format!(
                "self-consistency needs at least 2 draws, got {}",
                self.draws
            )));
        }
        if self.max_datasets_per_step == 0 {
            return Err(Error::Config(
                "max_datasets_per_step must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ScConfig {
    fn default() -> Self {
        ScConfig::new(WarmupSchedule::immediate())
    }
}

/// Per-epoch means of each loss component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub base_loss: f64,
    pub sc_loss: f64,
    pub mmd_loss: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<EpochLoss>,
    /// Fingerprint of the offline simulation table, taken every epoch.
    pub table_fingerprints: Vec<u64>,
}

fn simulate_one(
    model: &dyn GenerativeModel,
    rng: &mut dyn RngCore,
    what: &str,
) -> Result<(Vec<f64>, Dataset)> {
    model.sample_joint(rng).map_err(|e| e.context(what))
}

/// Simulation table for offline training.
pub fn simulation_table(
    model: &dyn GenerativeModel,
    size: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Dataset)>> {
    (0..size)
        .map(|i| {
            simulate_one(
                model,
                &mut rng::stream(seed, &[stage::OFFLINE_TABLE, i as u64]),
                "offline table",
            )
        })
        .collect()
}

pub fn table_fingerprint(table: &[(Vec<f64>, Dataset)]) -> u64 {
    math::fingerprint(table.iter().flat_map(|(t, d)| {
        t.iter()
            .chain(d.data.iter())
            .chain(d.context.iter())
            .copied()
    }))
}

fn with_step<T>(r: Result<T>, epoch: usize, step: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} (epoch {epoch}, step {step})")),
        other => other,
    })
}

/// Trains `surrogate` on simulations from `model`, adding the
/// self-consistency penalty on `sc_datasets` with weight `λ(epoch)`.
/// A surrogate with a likelihood network is trained on the joint score and
/// uses its learned likelihood inside the penalty; otherwise the model's
/// exact likelihood is used.
pub fn train(
    surrogate: &mut Surrogate,
    model: &dyn GenerativeModel,
    config: &TrainingConfig,
    sc: &ScConfig,
    sc_datasets: &[Dataset],
    seed: u64,
) -> Result<LossTrace> {
    train_with(surrogate, model, config, sc, sc_datasets, seed, &mut |_| {})
}

#[allow(clippy::too_many_arguments)]
pub fn train_with(
    surrogate: &mut Surrogate,
    model: &dyn GenerativeModel,
    config: &TrainingConfig,
    sc: &ScConfig,
    sc_datasets: &[Dataset],
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochLoss),
) -> Result<LossTrace> {
    config.validate()?;
    sc.validate()?;
    let table = match config.mode {
        SimulationMode::Offline => Some(simulation_table(model, config.simulation_budget, seed)?),
        SimulationMode::Online => None,
    };
    let p = surrogate.shape.param_dim;
    let mut trace = LossTrace::default();
    let mut tape = Tape::new();
    for epoch in 1..=config.epochs {
        let lambda = sc.schedule.lambda(epoch);
        let (mut base_sum, mut sc_sum, mut mmd_sum) = (0.0, 0.0, 0.0);
        for step in 0..config.steps_per_epoch {
            let mut batch_rng = rng::stream(seed, &[stage::TRAIN, epoch as u64, step as u64]);
            let owned;
            let batch: Vec<(&[f64], &Dataset)> = match &table {
                Some(t) => (0..config.batch_size)
                    .map(|_| {
                        let (th, d) = &t[batch_rng.random_range(0..t.len())];
                        (th.as_slice(), d)
                    })
                    .collect(),
                None => {
                    owned = (0..config.batch_size)
                        .map(|_| simulate_one(model, &mut batch_rng, "training batch"))
                        .collect::<Result<Vec<_>>>()?;
                    owned.iter().map(|(th, d)| (th.as_slice(), d)).collect()
                }
            };
            let thetas: Vec<Vec<f64>> = batch.iter().map(|(t, _)| t.to_vec()).collect();
            let data: Vec<&Dataset> = batch.iter().map(|(_, d)| *d).collect();

            tape.clear();
            let parts = with_step(
                batch_loss(&mut tape, surrogate, model, &thetas, &data),
                epoch,
                step,
            )?;
            let mut total = parts.total(&mut tape)?;
            base_sum += tape.item(total)?;

            if config.mmd {
                let width = tape.shape(parts.encoded.summaries)[1];
                let reference = standard_normal_tensor(
                    data.len(),
                    width,
                    &mut rng::stream(seed, &[stage::MMD, epoch as u64, step as u64]),
                );
                let m = with_step(
                    mmd_penalty(&mut tape, parts.encoded.summaries, &reference),
                    epoch,
                    step,
                )?;
                mmd_sum += tape.item(m)?;
                total = tape.add(total, m)?;
            }

            if lambda > 0.0 && !sc_datasets.is_empty() {
                let mut sc_rng = rng::stream(seed, &[stage::SC, epoch as u64, step as u64]);
                let chosen: Vec<&Dataset> = if sc_datasets.len() > sc.max_datasets_per_step {
                    let mut idx =
                        index::sample(&mut sc_rng, sc_datasets.len(), sc.max_datasets_per_step)
                            .into_vec();
                    idx.sort_unstable();
                    idx.into_iter().map(|i| &sc_datasets[i]).collect()
                } else {
                    sc_datasets.iter().collect()
                };
                let n = chosen.len() * sc.draws * p;
                let noise: Vec<f64> = (0..n)
                    .map(|_| sc_rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let noise = Tensor::new(alloc::vec![chosen.len() * sc.draws, p], noise)?;
                let term = with_step(
                    sc_variance_term(&mut tape, surrogate, model, &chosen, noise, sc.draws),
                    epoch,
                    step,
                )?;
                let value = tape.item(term)?;
                // A variance: negative values can only come from a bug.
                assert!(value >= 0.0, "negative self-consistency variance {value}");
                sc_sum += value;
                let weighted = tape.mul_scalar(term, lambda)?;
                total = tape.add(total, weighted)?;
            }

            with_step(tape.backward(total, &mut surrogate.store), epoch, step)?;
            if let Some(c) = config.grad_clip {
                surrogate.store.clip_grad_norm(c);
            }
            surrogate.store.step(config.learning_rate_at(epoch, step))?;
        }
        let steps = config.steps_per_epoch as f64;
        let record = EpochLoss {
            epoch,
            base_loss: base_sum / steps,
            sc_loss: sc_sum / steps,
            mmd_loss: mmd_sum / steps,
            lambda,
        };
        on_epoch(&record);
        trace.epochs.push(record);
        if let Some(t) = &table {
            trace.table_fingerprints.push(table_fingerprint(t));
        }
    }
    Ok(trace)
}

/// Marginal likelihoods `ln p(y | M_k)` for every model, required by the
/// classifier's self-consistency term.
pub fn analytic_marginals(models: &[&dyn GenerativeModel], data: &Dataset) -> Result<Vec<f64>> {
    models
        .iter()
        .map(|m| {
            m.analytic_log_evidence(data).ok_or_else(|| {
                Error::Unsupported(format!("{} has no marginal likelihood", m.name()))
            })
        })
        .collect()
}

/// Trains a model classifier on labeled simulations with uniform prior
/// model probabilities; `features` supplies summary inputs for all models.
pub fn train_classifier(
    classifier: &mut Classifier,
    models: &[&dyn GenerativeModel],
    features: &dyn GenerativeModel,
    config: &TrainingConfig,
    sc: &ScConfig,
    sc_datasets: &[Dataset],
    seed: u64,
) -> Result<LossTrace> {
    config.validate()?;
    sc.validate()?;
    let k = models.len();
    if k != classifier.models() || k < 2 {
        return Err(Error::usage(format!(
            "{k} models for a classifier over {}",
            classifier.models()
        )));
    }
    let prior = crate::evidence::uniform_prior(k);
    let marginals: Vec<Vec<f64>> = if sc_datasets.is_empty() {
        Vec::new()
    } else {
        sc_datasets
            .iter()
            .map(|d| analytic_marginals(models, d))
            .collect::<Result<_>>()?
    };
    let table = match config.mode {
        SimulationMode::Offline => Some(
            (0..config.simulation_budget)
                .map(|i| {
                    let mut r = rng::stream(seed, &[stage::OFFLINE_TABLE, i as u64]);
                    let label = r.random_range(0..k);
                    simulate_one(models[label], &mut r, "offline table").map(|(_, d)| (label, d))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        SimulationMode::Online => None,
    };
    let mut trace = LossTrace::default();
    let mut tape = Tape::new();
    for epoch in 1..=config.epochs {
        let lambda = sc.schedule.lambda(epoch);
        let (mut base_sum, mut sc_sum) = (0.0, 0.0);
        for step in 0..config.steps_per_epoch {
            let mut batch_rng = rng::stream(seed, &[stage::TRAIN, epoch as u64, step as u64]);
            let owned: Vec<(usize, Dataset)>;
            let labeled: Vec<(usize, &Dataset)> = match &table {
                Some(t) => (0..config.batch_size)
                    .map(|_| {
                        let (l, d) = &t[batch_rng.random_range(0..t.len())];
                        (*l, d)
                    })
                    .collect(),
                None => {
                    owned = (0..config.batch_size)
                        .map(|_| {
                            let label = batch_rng.random_range(0..k);
                            simulate_one(models[label], &mut batch_rng, "training batch")
                                .map(|(_, d)| (label, d))
                        })
                        .collect::<Result<_>>()?;
                    owned.iter().map(|(l, d)| (*l, d)).collect()
                }
            };
            let (chosen, chosen_marginals): (Vec<&Dataset>, Vec<Vec<f64>>) = if lambda > 0.0 {
                let mut sc_rng = rng::stream(seed, &[stage::SC, epoch as u64, step as u64]);
                let idx: Vec<usize> = if sc_datasets.len() > sc.max_datasets_per_step {
                    let mut i =
                        index::sample(&mut sc_rng, sc_datasets.len(), sc.max_datasets_per_step)
                            .into_vec();
                    i.sort_unstable();
                    i
                } else {
                    (0..sc_datasets.len()).collect()
                };
                idx.iter()
                    .map(|&i| (&sc_datasets[i], marginals[i].clone()))
                    .unzip()
            } else {
                (Vec::new(), Vec::new())
            };
            tape.clear();
            let obj = with_step(
                classifier_sc_objective(
                    &mut tape,
                    classifier,
                    features,
                    &labeled,
                    &chosen,
                    &chosen_marginals,
                    &prior,
                    lambda,
                ),
                epoch,
                step,
            )?;
            base_sum += tape.item(obj.cross_entropy)?;
            if let Some(v) = obj.variance {
                sc_sum += tape.item(v)?;
            }
            with_step(tape.backward(obj.total, &mut classifier.store), epoch, step)?;
            if let Some(c) = config.grad_clip {
                classifier.store.clip_grad_norm(c);
            }
            classifier
                .store
                .step(config.learning_rate_at(epoch, step))?;
        }
        let steps = config.steps_per_epoch as f64;
        trace.epochs.push(EpochLoss {
            epoch,
            base_loss: base_sum / steps,
            sc_loss: sc_sum / steps,
            mmd_loss: 0.0,
            lambda,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_rate_starts_at_base_and_halves_midway() {
        let cfg = TrainingConfig {
            mode: SimulationMode::Online,
            epochs: 4,
            steps_per_epoch: 5,
            batch_size: 1,
            learning_rate: 0.2,
            simulation_budget: 1,
            mmd: false,
            grad_clip: None,
            lr_schedule: LrSchedule::Cosine,
        };
        assert_eq!(cfg.learning_rate_at(1, 0), 0.2);
        assert!((cfg.learning_rate_at(3, 0) - 0.1).abs() < 1e-15);
        let rates: Vec<f64> = (1..=4)
            .flat_map(|e| (0..5).map(move |s| (e, s)))
            .map(|(e, s)| cfg.learning_rate_at(e, s))
            .collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        let constant = TrainingConfig {
            lr_schedule: LrSchedule::Constant,
            ..cfg
        };
        assert_eq!(constant.learning_rate_at(4, 4), 0.2);
    }
}
