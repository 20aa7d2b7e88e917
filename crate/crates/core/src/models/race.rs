//! Two-accumulator racing diffusion model.
//!
//! Each accumulator `dX = ν dt + dW` starts at zero; the first to reach the
//! threshold `α` determines the response. First-passage times are inverse
//! Gaussian with mean `α/ν` and shape `α²`. Responses are stored as signed
//! response times (negative for incorrect) with a condition column
//! (0 = speed, 1 = accuracy).
//!
//! The non-decision time is expressed relative to the fastest response:
//! `t0 = τ · min|rt|` with `logit τ` the unconstrained parameter. The
//! simulator realizes this by setting `t0 = min(decision) · τ/(1-τ)`. The map
//! from decision times to response times then has Jacobian `1/(1-τ)`, so the
//! dataset likelihood carries an extra `ln(1-τ)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, InverseGaussian, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, GenerativeModel, Transform};
use crate::error::{Error, Result};
use crate::math::{self, LN_2PI};
use crate::tensor::Tensor;

pub const SPEED: usize = 0;
pub const ACCURACY: usize = 1;

const LOG_SD: f64 = 0.5;
const LOGIT_TAU_SD: f64 = 1.0;

/// `ln f(t)` for the first passage of a unit-diffusion process with drift
/// `nu` through threshold `alpha`.
pub fn first_passage_log_pdf(t: f64, alpha: f64, nu: f64) -> f64 {
    if t <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let d = alpha - nu * t;
    alpha.ln() - 0.5 * (LN_2PI + 3.0 * t.ln()) - d * d / (2.0 * t)
}

/// `ln P(T > t)` for the same first-passage time.
pub fn first_passage_log_survival(t: f64, alpha: f64, nu: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let st = t.sqrt();
    let a = (alpha - nu * t) / st;
    let b = (alpha + nu * t) / st;
    let la = math::log_ndtr(a);
    let ratio = 2.0 * nu * alpha + math::log_ndtr(-b) - la;
    if ratio >= 0.0 {
        return f64::NEG_INFINITY;
    }
    la + (-ratio.exp()).ln_1p()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RaceVariant {
    /// Threshold shared across conditions.
    M0,
    /// Separate speed and accuracy thresholds.
    M1,
}

/// Natural-scale parameters of one dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaceParams {
    /// Threshold per condition (speed, accuracy).
    pub alpha: [f64; 2],
    pub nu_correct: f64,
    pub nu_incorrect: f64,
    pub tau: f64,
}

impl RaceParams {
    pub fn shared(alpha: f64, nu_correct: f64, nu_incorrect: f64, tau: f64) -> Self {
        RaceParams {
            alpha: [alpha, alpha],
            nu_correct,
            nu_incorrect,
            tau,
        }
    }
}

/// `ln[f_winner(|rt| - t0) · S_loser(|rt| - t0)]` for one trial; the correct
/// accumulator wins iff `rt > 0`. Returns `-∞` when `|rt| ≤ t0`.
pub fn wald_race_log_density(
    signed_rt: f64,
    condition: usize,
    p: &RaceParams,
    t0: f64,
) -> Result<f64> {
    let alpha = p.alpha[condition.min(1)];
    if alpha <= 0.0 || p.nu_correct <= 0.0 || p.nu_incorrect <= 0.0 {
        return Err(Error::domain(
            "wald_race",
            format!("alpha={alpha}, nu=({}, {})", p.nu_correct, p.nu_incorrect),
        ));
    }
    let t = signed_rt.abs() - t0;
    if t <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let (winner, loser) = if signed_rt > 0.0 {
        (p.nu_correct, p.nu_incorrect)
    } else {
        (p.nu_incorrect, p.nu_correct)
    };
    Ok(first_passage_log_pdf(t, alpha, winner) + first_passage_log_survival(t, alpha, loser))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RacingDiffusionModel {
    pub variant: RaceVariant,
    pub trials_per_condition: usize,
}

impl RacingDiffusionModel {
    pub fn new(variant: RaceVariant, trials_per_condition: usize) -> Self {
        RacingDiffusionModel {
            variant,
            trials_per_condition,
        }
    }

    pub fn params(&self, theta: &[f64]) -> RaceParams {
        let tau = math::sigmoid(theta[theta.len() - 1]);
        match self.variant {
            RaceVariant::M0 => {
                RaceParams::shared(theta[0].exp(), theta[1].exp(), theta[2].exp(), tau)
            }
            RaceVariant::M1 => RaceParams {
                alpha: [theta[0].exp(), theta[1].exp()],
                nu_correct: theta[2].exp(),
                nu_incorrect: theta[3].exp(),
                tau,
            },
        }
    }

    /// Simulates from natural-scale parameters.
    pub fn simulate_params(&self, p: &RaceParams, rng: &mut dyn RngCore) -> Result<Dataset> {
        let n = 2 * self.trials_per_condition;
        let mut decision = Vec::with_capacity(n);
        let mut correct = Vec::with_capacity(n);
        for i in 0..n {
            let cond = if i < self.trials_per_condition {
                SPEED
            } else {
                ACCURACY
            };
            let alpha = p.alpha[cond];
            let fc = sample_first_passage(alpha, p.nu_correct, rng)?;
            let fi = sample_first_passage(alpha, p.nu_incorrect, rng)?;
            decision.push(fc.min(fi));
            correct.push(fc <= fi);
        }
        let min_dec = decision.iter().copied().fold(f64::INFINITY, f64::min);
        let t0 = min_dec * p.tau / (1.0 - p.tau);
        let mut data = Vec::with_capacity(2 * n);
        for i in 0..n {
            let rt = decision[i] + t0;
            data.push(if correct[i] { rt } else { -rt });
            data.push(if i < self.trials_per_condition {
                SPEED as f64
            } else {
                ACCURACY as f64
            });
        }
        Dataset::new(n, 2, data)
    }

    /// Non-decision time implied by `τ` and the dataset.
    pub fn t0(&self, data: &Dataset, tau: f64) -> f64 {
        tau * min_abs_rt(data)
    }
}

fn sample_first_passage(alpha: f64, nu: f64, rng: &mut dyn RngCore) -> Result<f64> {
    let ig = InverseGaussian::new(alpha / nu, alpha * alpha)
        .map_err(|e| Error::domain("inverse_gaussian", format!("{e:?}")))?;
    Ok(ig.sample(rng))
}

pub(crate) fn min_abs_rt(data: &Dataset) -> f64 {
    data.column(0).map(f64::abs).fold(f64::INFINITY, f64::min)
}

impl GenerativeModel for RacingDiffusionModel {
    fn name(&self) -> &str {
        match self.variant {
            RaceVariant::M0 => "race-m0",
            RaceVariant::M1 => "race-m1",
        }
    }

    fn param_names(&self) -> Vec<String> {
        let names: &[&str] = match self.variant {
            RaceVariant::M0 => &[
                "log_alpha",
                "log_nu_correct",
                "log_nu_incorrect",
                "logit_tau",
            ],
            RaceVariant::M1 => &[
                "log_alpha_speed",
                "log_alpha_accuracy",
                "log_nu_correct",
                "log_nu_incorrect",
                "logit_tau",
            ],
        };
        names.iter().map(|s| String::from(*s)).collect()
    }

    fn transforms(&self) -> Vec<Transform> {
        let mut t = vec![Transform::Log; self.param_dim() - 1];
        t.push(Transform::Logit);
        t
    }

    fn sample_prior(&self, _context: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let d = self.param_dim();
        (0..d)
            .map(|i| {
                let sd = if i + 1 == d { LOGIT_TAU_SD } else { LOG_SD };
                sd * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }

    fn prior_log_density(&self, theta: &[f64], _context: &[f64]) -> f64 {
        let d = theta.len();
        theta
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                math::normal_log_pdf(x, 0.0, if i + 1 == d { LOGIT_TAU_SD } else { LOG_SD })
            })
            .sum()
    }

    fn prior_log_density_grad(&self, theta: &[f64], context: &[f64]) -> (f64, Vec<f64>) {
        let d = theta.len();
        let g = theta
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let sd = if i + 1 == d { LOGIT_TAU_SD } else { LOG_SD };
                -x / (sd * sd)
            })
            .collect();
        (self.prior_log_density(theta, context), g)
    }

    fn simulate(&self, theta: &[f64], _context: &[f64], rng: &mut dyn RngCore) -> Result<Dataset> {
        if theta.len() != self.param_dim() {
            return Err(Error::shape(
                "race simulate",
                format!("θ has {} entries", theta.len()),
            ));
        }
        self.simulate_params(&self.params(theta), rng)
    }

    fn log_likelihood(&self, data: &Dataset, theta: &[f64]) -> Option<f64> {
        let p = self.params(theta);
        if !(p.tau < 1.0) {
            return Some(f64::NEG_INFINITY);
        }
        let t0 = self.t0(data, p.tau);
        let mut total = math::log_sigmoid(-theta[theta.len() - 1]);
        for i in 0..data.rows {
            let row = data.row(i);
            match wald_race_log_density(row[0], row[1] as usize, &p, t0) {
                Ok(v) => total += v,
                Err(_) => return Some(f64::NEG_INFINITY),
            }
        }
        Some(total)
    }

    fn summary_input_dim(&self) -> usize {
        2
    }

    fn condition_extras(&self, data: &Dataset) -> Vec<f64> {
        vec![min_abs_rt(data).ln()]
    }

    fn extras_dim(&self) -> usize {
        1
    }

    fn likelihood_rows(&self, data: &Dataset) -> (Tensor, Tensor) {
        let rt: Vec<f64> = data.column(0).collect();
        let cond: Vec<f64> = data.column(1).collect();
        (
            Tensor::new(vec![data.rows, 1], rt).expect("column"),
            Tensor::new(vec![data.rows, 1], cond).expect("column"),
        )
    }

    fn likelihood_target_dim(&self) -> usize {
        1
    }

    fn likelihood_row_context_dim(&self) -> usize {
        1
    }
}
