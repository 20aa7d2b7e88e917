use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::gaussian::MultivariateNormal;
use super::mcmc::{effective_sample_size, McmcChain};
use super::{moments, EvidenceTarget};
use crate::error::{Error, Result};
use crate::evidence::EvidenceEstimate;
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeConfig {
    pub proposal_draws: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Fit the proposal on the second half of the chain and bridge with the first.
    #[serde(default)]
    pub swap_halves: bool,
}

fn default_tolerance() -> f64 {
    1e-10
}

fn default_max_iterations() -> usize {
    1000
}

impl BridgeConfig {
    pub fn new(proposal_draws: usize) -> Self {
        BridgeConfig {
            proposal_draws,
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
            swap_halves: false,
        }
    }
}

/// Iterative optimal bridge sampling with a moment-matched normal proposal.
///
/// One half of the chain fits the proposal `g`; the other half and fresh
/// draws from `g` enter the fixed point
///
/// ```text
/// r ← [1/N₂ Σⱼ l₂ⱼ / (s₁ l₂ⱼ + s₂ r)] / [1/N₁ Σᵢ 1 / (s₁ l₁ᵢ + s₂ r)]
/// ```
///
/// with `l = p(θ) p(y | θ) / g(θ)`, evaluated in log space relative to the
/// median of `ln l₁`. `N₁` in the weights `s₁, s₂` is the effective sample
/// size of the bridging half.
pub fn bridge_sampling_log_evidence(
    target: &dyn EvidenceTarget,
    chain: &McmcChain,
    config: &BridgeConfig,
    rng: &mut dyn RngCore,
) -> Result<EvidenceEstimate> {
    let n = chain.draws.len();
    if n < 8 || config.proposal_draws == 0 {
        return Err(Error::usage(format!(
            "bridge sampling with {n} chain draws and {} proposal draws",
            config.proposal_draws
        )));
    }
    let (first, second) = chain.draws.split_at(n / 2);
    let (fit, bridge) = if config.swap_halves {
        (second, first)
    } else {
        (first, second)
    };
    let (mean, cov) = moments(fit);
    let proposal = match MultivariateNormal::new(mean.clone(), &cov) {
        Ok(p) => p,
        Err(_) => {
            let d = mean.len();
            let var: Vec<f64> = (0..d).map(|i| cov[i * d + i].max(1e-12)).collect();
            MultivariateNormal::diagonal(mean, &var)?
        }
    };
    let l1: Vec<f64> = bridge
        .iter()
        .map(|x| target.log_joint(x) - proposal.log_pdf(x))
        .collect();
    let l2: Vec<f64> = (0..config.proposal_draws)
        .map(|_| {
            let x = proposal.sample(rng);
            target.log_joint(&x) - proposal.log_pdf(&x)
        })
        .collect();
    if l1.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "posterior draw outside the target's support".into(),
        ));
    }
    let d = chain.dim();
    let ess = (0..d)
        .map(|j| effective_sample_size(&bridge.iter().map(|x| x[j]).collect::<Vec<_>>()))
        .fold(f64::INFINITY, f64::min)
        .min(bridge.len() as f64);
    let n1 = ess;
    let n2 = config.proposal_draws as f64;
    let s1 = n1 / (n1 + n2);
    let s2 = n2 / (n1 + n2);
    let lstar = math::median(&l1);
    let e1: Vec<f64> = l1.iter().map(|v| (v - lstar).exp()).collect();
    let e2: Vec<f64> = l2.iter().map(|v| (v - lstar).exp()).collect();

    let mut r = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iterations {
        iterations += 1;
        let num: f64 = e2.iter().map(|e| e / (s1 * e + s2 * r)).sum::<f64>() / e2.len() as f64;
        let den: f64 = e1.iter().map(|e| 1.0 / (s1 * e + s2 * r)).sum::<f64>() / e1.len() as f64;
        let next = num / den;
        if !next.is_finite() || next <= 0.0 {
            return Err(Error::BridgeNonConvergence {
                iterations,
                last: r.ln() + lstar,
            });
        }
        let change = ((next - r) / next).abs();
        r = next;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    let log_ml = r.ln() + lstar;
    if !converged {
        return Err(Error::BridgeNonConvergence {
            iterations,
            last: log_ml,
        });
    }

    // Relative mean-square error of the estimate (Frühwirth-Schnatter 2004),
    // with the posterior-side term inflated by the chain's autocorrelation.
    let r1: Vec<f64> = l1.iter().map(|v| (v - log_ml).exp()).collect();
    let r2: Vec<f64> = l2.iter().map(|v| (v - log_ml).exp()).collect();
    let f1: Vec<f64> = r2.iter().map(|x| x / (s1 * x + s2)).collect();
    let f2: Vec<f64> = r1.iter().map(|x| 1.0 / (s1 * x + s2)).collect();
    let rel = |f: &[f64]| {
        let m = math::mean(f);
        math::variance(f, 1) / (m * m)
    };
    let re2 = rel(&f1) / n2 + rel(&f2) / n1;
    Ok(EvidenceEstimate {
        log_ml,
        per_draw_terms: l1,
        mc_std_error: re2.sqrt(),
        draws: bridge.len() + config.proposal_draws,
        method: String::from("bridge"),
        skipped: 0,
        iterations: Some(iterations),
        warnings: Vec::new(),
    })
}
