use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::gaussian::MultivariateT;
use super::EvidenceTarget;
use crate::error::{Error, Result};
use crate::evidence::EvidenceEstimate;
use crate::math;
use crate::models::central_difference;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Stop once the gradient's largest component falls below this.
    pub tolerance: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            iterations: 5000,
            learning_rate: 0.05,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplaceConfig {
    pub draws: usize,
    #[serde(default = "default_df")]
    pub df: f64,
    /// Inflation of the inverse negative Hessian.
    #[serde(default = "default_inflation")]
    pub inflation: f64,
    #[serde(default)]
    pub map: MapConfig,
}

fn default_df() -> f64 {
    5.0
}

fn default_inflation() -> f64 {
    1.5
}

impl LaplaceConfig {
    pub fn new(draws: usize) -> Self {
        LaplaceConfig {
            draws,
            df: default_df(),
            inflation: default_inflation(),
            map: MapConfig::default(),
        }
    }
}

/// Posterior mode by adaptive-moment ascent on `ln p(θ) + ln p(y | θ)` with
/// finite-difference gradients. The step size decays as `lr / √(1 + t/100)`.
pub fn find_map(target: &dyn EvidenceTarget, init: &[f64], config: &MapConfig) -> Result<Vec<f64>> {
    let d = init.len();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut x = init.to_vec();
    if !target.log_joint(&x).is_finite() {
        return Err(Error::Estimation(
            "posterior mode search started outside the support".into(),
        ));
    }
    let mut m = alloc::vec![0.0; d];
    let mut v = alloc::vec![0.0; d];
    let mut best = (target.log_joint(&x), x.clone());
    for t in 1..=config.iterations {
        let g = central_difference(&x, |p| target.log_joint(p));
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Estimation(format!(
                "posterior mode search diverged at {x:?}"
            )));
        }
        if g.iter().all(|gi| gi.abs() < config.tolerance) {
            break;
        }
        let lr = config.learning_rate / (1.0 + t as f64 / 100.0).sqrt();
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for i in 0..d {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            x[i] += lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
        let f = target.log_joint(&x);
        if !f.is_finite() && f != f64::NEG_INFINITY {
            return Err(Error::Estimation(format!(
                "posterior mode search diverged: {f}"
            )));
        }
        if f > best.0 {
            best = (f, x.clone());
        }
    }
    Ok(best.1)
}

/// Hessian of `ln p(θ) + ln p(y | θ)` by central differences with step
/// `1e-4 · (1 + |θᵢ|)`.
fn hessian(target: &dyn EvidenceTarget, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
    let f = |p: &[f64]| target.log_joint(p);
    let f0 = f(x);
    let mut out = alloc::vec![0.0; d * d];
    let mut p = x.to_vec();
    for i in 0..d {
        p[i] = x[i] + h[i];
        let up = f(&p);
        p[i] = x[i] - h[i];
        let down = f(&p);
        p[i] = x[i];
        out[i * d + i] = (up - 2.0 * f0 + down) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                p[i] = x[i] + si * h[i];
                p[j] = x[j] + sj * h[j];
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            out[i * d + j] = v;
            out[j * d + i] = v;
        }
    }
    out
}

fn invert(matrix: &[f64], d: usize) -> Option<Vec<f64>> {
    let m = nalgebra::DMatrix::from_row_slice(d, d, matrix);
    let inv = m.cholesky()?.inverse();
    Some((0..d * d).map(|k| inv[(k / d, k % d)]).collect())
}

/// Importance sampling from a multivariate-t proposal centred at the
/// posterior mode with scale `inflation · (−H)⁻¹`.
pub fn laplace_is_log_evidence(
    target: &dyn EvidenceTarget,
    init: &[f64],
    config: &LaplaceConfig,
    rng: &mut dyn RngCore,
) -> Result<EvidenceEstimate> {
    let d = target.dim();
    if init.len() != d || config.draws == 0 {
        return Err(Error::usage(format!(
            "initial point of length {} for dimension {d}, {} draws",
            init.len(),
            config.draws
        )));
    }
    let mode = find_map(target, init, &config.map)?;
    let h = hessian(target, &mode);
    let neg: Vec<f64> = h.iter().map(|v| -v).collect();
    let mut warnings: Vec<String> = Vec::new();
    let cov = match invert(&neg, d) {
        Some(c) => c,
        None => {
            warnings.push(String::from(
                "negative Hessian not positive definite; using absolute diagonal",
            ));
            let mut c = alloc::vec![0.0; d * d];
            for i in 0..d {
                let a = h[i * d + i].abs();
                c[i * d + i] = if a > 0.0 { 1.0 / a } else { 1.0 };
            }
            c
        }
    };
    let scale: Vec<f64> = cov.iter().map(|c| c * config.inflation).collect();
    let proposal = MultivariateT::new(mode, &scale, config.df)?;
    let mut est = importance_sampling_log_evidence(
        target,
        &mut |r: &mut dyn RngCore| proposal.sample(r),
        &|x: &[f64]| proposal.log_pdf(x),
        config.draws,
        rng,
    )?;
    est.method = String::from("laplace_is");
    est.warnings = warnings;
    Ok(est)
}

/// `ln mean_s [p(θ_s) p(y | θ_s) / g(θ_s)]` over draws from the proposal `g`.
/// Per-draw terms are the log weights of the draws inside the support.
pub fn importance_sampling_log_evidence(
    target: &dyn EvidenceTarget,
    sample: &mut dyn FnMut(&mut dyn RngCore) -> Vec<f64>,
    log_pdf: &dyn Fn(&[f64]) -> f64,
    draws: usize,
    rng: &mut dyn RngCore,
) -> Result<EvidenceEstimate> {
    if draws == 0 {
        return Err(Error::usage("importance sampling needs at least one draw"));
    }
    let mut terms = Vec::with_capacity(draws);
    let mut skipped = 0;
    for _ in 0..draws {
        let x = sample(rng);
        let lj = target.log_joint(&x);
        if lj == f64::NEG_INFINITY {
            skipped += 1;
            continue;
        }
        terms.push(lj - log_pdf(&x));
    }
    if terms.is_empty() {
        return Err(Error::Estimation(
            "every importance draw fell outside the support".into(),
        ));
    }
    let n = draws as f64;
    let log_ml = math::log_sum_exp(&terms) - n.ln();
    if !log_ml.is_finite() {
        return Err(Error::NonFinite(format!(
            "importance sampling evidence {log_ml}"
        )));
    }
    // Standard error of the mean weight relative to the mean, zero weights included.
    let sum_sq: f64 = terms
        .iter()
        .map(|t| ((t - log_ml).exp() - 1.0).powi(2))
        .sum::<f64>()
        + skipped as f64;
    let mc_std_error = if draws > 1 {
        (sum_sq / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(EvidenceEstimate {
        log_ml,
        per_draw_terms: terms,
        mc_std_error,
        draws,
        method: String::from("importance"),
        skipped,
        iterations: None,
        warnings: Vec::new(),
    })
}
