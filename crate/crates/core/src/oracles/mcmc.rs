use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RwmConfig {
    /// Sweeps, each updating every coordinate once.
    pub steps: usize,
    /// Leading fraction of sweeps used for step-size adaptation and discarded.
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_initial_scale")]
    pub initial_scale: f64,
    #[serde(default = "default_target_acceptance")]
    pub target_acceptance: f64,
}

fn default_burn_in() -> f64 {
    0.5
}

fn default_thin() -> usize {
    1
}

fn default_initial_scale() -> f64 {
    0.5
}

fn default_target_acceptance() -> f64 {
    0.3
}

impl RwmConfig {
    pub fn new(steps: usize) -> Self {
        RwmConfig {
            steps,
            burn_in_fraction: default_burn_in(),
            thin: default_thin(),
            initial_scale: default_initial_scale(),
            target_acceptance: default_target_acceptance(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcChain {
    /// Post-burn-in, thinned draws.
    pub draws: Vec<Vec<f64>>,
    /// Mean per-coordinate acceptance after adaptation.
    pub acceptance_rate: f64,
    pub coordinate_acceptance: Vec<f64>,
    pub step_sizes: Vec<f64>,
    /// Acceptance outside `(0.1, 0.6)`.
    pub flagged: bool,
}

impl McmcChain {
    pub fn dim(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }
}

/// `min(1, exp(Δ))`, zero for NaN.
pub fn metropolis_accept_prob(delta: f64) -> f64 {
    if delta.is_nan() {
        0.0
    } else if delta >= 0.0 {
        1.0
    } else {
        delta.exp()
    }
}

/// Component-wise Gaussian random-walk Metropolis. During burn-in each
/// coordinate's proposal scale follows a Robbins–Monro update toward the
/// target acceptance rate; afterwards scales are frozen.
pub fn rwm_sample(
    log_target: &dyn Fn(&[f64]) -> f64,
    init: &[f64],
    config: &RwmConfig,
    rng: &mut dyn RngCore,
) -> Result<McmcChain> {
    let d = init.len();
    let mut x = init.to_vec();
    let mut fx = log_target(&x);
    if !fx.is_finite() {
        return Err(Error::usage(format!("target is {fx} at the initial point")));
    }
    if config.steps == 0 || config.thin == 0 || !(0.0..1.0).contains(&config.burn_in_fraction) {
        return Err(Error::Config(format!(
            "invalid sampler settings {config:?}"
        )));
    }
    let burn = (config.steps as f64 * config.burn_in_fraction) as usize;
    let mut log_scale = alloc::vec![config.initial_scale.ln(); d];
    let mut accepted = alloc::vec![0usize; d];
    let mut draws = Vec::with_capacity((config.steps - burn) / config.thin + 1);
    for sweep in 0..config.steps {
        for j in 0..d {
            let old = x[j];
            x[j] = old + log_scale[j].exp() * rng.sample::<f64, _>(StandardNormal);
            let fy = log_target(&x);
            let a = metropolis_accept_prob(fy - fx);
            let accept = rng.random::<f64>() < a;
            if accept {
                fx = fy;
            } else {
                x[j] = old;
            }
            if sweep < burn {
                let gain = 1.0 / ((sweep + 1) as f64).powf(0.6);
                log_scale[j] += gain * (a - config.target_acceptance);
            } else if accept {
                accepted[j] += 1;
            }
        }
        if sweep >= burn && (sweep - burn).is_multiple_of(config.thin) {
            draws.push(x.clone());
        }
    }
    let kept = (config.steps - burn) as f64;
    let coordinate_acceptance: Vec<f64> = accepted.iter().map(|&a| a as f64 / kept).collect();
    if coordinate_acceptance.contains(&0.0) {
        return Err(Error::Mixing(format!(
            "no accepted moves after adaptation: {coordinate_acceptance:?}"
        )));
    }
    let acceptance_rate = math::mean(&coordinate_acceptance);
    Ok(McmcChain {
        draws,
        acceptance_rate,
        flagged: !(0.1..0.6).contains(&acceptance_rate),
        coordinate_acceptance,
        step_sizes: log_scale.iter().map(|s| s.exp()).collect(),
    })
}

/// Effective sample size from Geyer's initial positive sequence of
/// autocorrelation pairs.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let m = math::mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|i| (xs[i] - m) * (xs[i + lag] - m))
            .sum::<f64>()
            / (n as f64 * c0)
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64)
}

/// Gelman–Rubin potential scale reduction per coordinate over equal-length chains.
pub fn potential_scale_reduction(chains: &[McmcChain]) -> Result<Vec<f64>> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::usage(
            "potential scale reduction needs at least two chains",
        ));
    }
    let n = chains.iter().map(|c| c.draws.len()).min().unwrap_or(0);
    if n < 2 {
        return Err(Error::usage("chains are too short"));
    }
    let d = chains[0].dim();
    Ok((0..d)
        .map(|j| {
            let cols: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| c.coordinate(j)[..n].to_vec())
                .collect();
            let means: Vec<f64> = cols.iter().map(|c| math::mean(c)).collect();
            let w = cols.iter().map(|c| math::variance(c, 1)).sum::<f64>() / m as f64;
            let b = n as f64 * math::variance(&means, 1);
            let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
            (var_plus / w).sqrt()
        })
        .collect())
}
