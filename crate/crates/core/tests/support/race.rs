//! Race-model references: probability mass by adaptive quadrature and a
//! chi-square comparison of simulated response times with the density.

use abmc_core::models::{
    first_passage_log_pdf, first_passage_log_survival, RaceParams, RaceVariant,
    RacingDiffusionModel,
};
use abmc_core::rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::integrate;

/// `f_w(t) S_l(t)` written out from the closed forms, independently of the
/// crate's implementation.
pub fn winner_density(t: f64, alpha: f64, nu_w: f64, nu_l: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let f = alpha / (2.0 * std::f64::consts::PI * t.powi(3)).sqrt()
        * (-(alpha - nu_w * t).powi(2) / (2.0 * t)).exp();
    let phi = |x: f64| 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2);
    let cdf = phi((nu_l * t - alpha) / t.sqrt())
        + (2.0 * alpha * nu_l).exp() * phi(-(nu_l * t + alpha) / t.sqrt());
    f * (1.0 - cdf).max(0.0)
}

/// The crate's density for the same trial, for cross-checking.
pub fn crate_winner_density(t: f64, alpha: f64, nu_w: f64, nu_l: f64) -> f64 {
    (first_passage_log_pdf(t, alpha, nu_w) + first_passage_log_survival(t, alpha, nu_l)).exp()
}

fn mass(density: &dyn Fn(f64) -> f64, upper: f64) -> f64 {
    // Geometric pieces resolve the sharp rise near zero.
    let mut edges = vec![0.0];
    let mut e = 1e-3;
    while e < upper {
        edges.push(e);
        e *= 2.0;
    }
    edges.push(upper);
    edges
        .windows(2)
        .map(|w| integrate(density, w[0], w[1], 1e-11))
        .sum()
}

/// Total probability over both accumulators and all decision times for one
/// threshold, using the crate's density.
pub fn total_mass(alpha: f64, nu_c: f64, nu_i: f64) -> f64 {
    let upper = 200.0 * (alpha / nu_c.min(nu_i)).max(1.0);
    mass(&|t| crate_winner_density(t, alpha, nu_c, nu_i), upper)
        + mass(&|t| crate_winner_density(t, alpha, nu_i, nu_c), upper)
}

/// Chi-square p-value of simulated correct-response times (zero
/// non-decision time) against the analytic density over `bins`
/// equiprobable bins of the conditional distribution.
pub fn chi_square_p(
    alpha: f64,
    nu_c: f64,
    nu_i: f64,
    trials: usize,
    bins: usize,
    seed: u64,
) -> f64 {
    let model = RacingDiffusionModel::new(RaceVariant::M0, trials / 2);
    let p = RaceParams::shared(alpha, nu_c, nu_i, 0.0);
    let data = model
        .simulate_params(&p, &mut rng::stream(seed, &[]))
        .unwrap();
    let correct: Vec<f64> = data.column(0).filter(|v| *v > 0.0).collect();
    let density = |t: f64| winner_density(t, alpha, nu_c, nu_i);
    let upper = 200.0 * (alpha / nu_c.min(nu_i)).max(1.0);
    let p_correct = mass(&density, upper);

    // Bin edges at conditional quantiles, located by bisection on the
    // integrated density.
    let cdf = |x: f64| mass(&density, x) / p_correct;
    let mut edges = vec![0.0];
    for k in 1..bins {
        let target = k as f64 / bins as f64;
        let (mut lo, mut hi) = (*edges.last().unwrap(), upper);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        edges.push(0.5 * (lo + hi));
    }
    edges.push(f64::INFINITY);
    let mut counts = vec![0usize; bins];
    for &t in &correct {
        let k = edges
            .windows(2)
            .position(|w| t >= w[0] && t < w[1])
            .unwrap();
        counts[k] += 1;
    }
    let expected = correct.len() as f64 / bins as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}
