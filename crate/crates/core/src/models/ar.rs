//! First-order autoregressive models with two covariates:
//! `y[t+1] ~ N(α + β y[t] + γ u[t] + δ w[t], σ)`, where the reduced variants
//! drop `γ` (M1), `δ` (M2) or the autoregressive term `β` (M3).
//!
//! Datasets have `AR_STEPS + 1` rows `(t, y, u, w)` starting at `y[0] = 0`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, GenerativeModel, Transform};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Number of transitions per series (16 annual points).
pub const AR_STEPS: usize = 15;

const COVARIATE_AR: f64 = 0.8;
const COVARIATE_SD: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArVariant {
    M0,
    M1,
    M2,
    M3,
}

impl ArVariant {
    pub const ALL: [ArVariant; 4] = [ArVariant::M0, ArVariant::M1, ArVariant::M2, ArVariant::M3];

    fn uses(self) -> [bool; 4] {
        // α, β, γ, δ
        match self {
            ArVariant::M0 => [true, true, true, true],
            ArVariant::M1 => [true, true, false, true],
            ArVariant::M2 => [true, true, true, false],
            ArVariant::M3 => [true, false, true, true],
        }
    }
}

/// Natural-scale coefficients; removed terms are held at zero by the model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub sigma: f64,
}

const PRIOR_MEAN: [f64; 5] = [0.0, 0.0, 0.0, 0.0, -1.0];
const PRIOR_SD: [f64; 5] = [0.5, 0.2, 0.5, 0.5, 0.5];
const NAMES: [&str; 5] = ["alpha", "beta", "gamma", "delta", "log_sigma"];

/// Standardized AR(1) covariate series of length `len`.
pub fn synthetic_covariates(len: usize, rng: &mut dyn RngCore) -> (Vec<f64>, Vec<f64>) {
    let mut series = || {
        let stationary = COVARIATE_SD / (1.0 - COVARIATE_AR * COVARIATE_AR).sqrt();
        let mut x = stationary * rng.sample::<f64, _>(StandardNormal);
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(x);
            x = COVARIATE_AR * x + COVARIATE_SD * rng.sample::<f64, _>(StandardNormal);
        }
        let m = math::mean(&v);
        let sd = math::variance(&v, 0).sqrt().max(1e-12);
        v.iter().map(|x| (x - m) / sd).collect::<Vec<_>>()
    };
    let u = series();
    let w = series();
    (u, w)
}

/// `y[1..=T]` by recursive normal draws from `y0`; coefficients the variant
/// removes contribute exactly zero.
pub fn simulate_ar(
    variant: ArVariant,
    coef: &ArCoefficients,
    u: &[f64],
    w: &[f64],
    y0: f64,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    if coef.sigma <= 0.0 || !coef.sigma.is_finite() {
        return Err(Error::domain(
            "simulate_ar",
            format!("sigma = {}", coef.sigma),
        ));
    }
    if u.len() < steps || w.len() < steps {
        return Err(Error::shape(
            "simulate_ar",
            format!("covariates shorter than {steps}"),
        ));
    }
    let on = variant.uses();
    let pick = |flag: bool, v: f64| if flag { v } else { 0.0 };
    let (b, g, d) = (
        pick(on[1], coef.beta),
        pick(on[2], coef.gamma),
        pick(on[3], coef.delta),
    );
    let mut y = y0;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let mean = coef.alpha + b * y + g * u[t] + d * w[t];
        y = mean + coef.sigma * rng.sample::<f64, _>(StandardNormal);
        out.push(y);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub variant: ArVariant,
    pub steps: usize,
}

impl ArModel {
    pub fn new(variant: ArVariant) -> Self {
        ArModel {
            variant,
            steps: AR_STEPS,
        }
    }

    /// Indices into `(α, β, γ, δ, log σ)` of the parameters this variant uses.
    fn active(&self) -> Vec<usize> {
        let on = self.variant.uses();
        (0..5).filter(|&i| i == 4 || on[i]).collect()
    }

    pub fn coefficients(&self, theta: &[f64]) -> ArCoefficients {
        let mut full = [0.0; 5];
        for (&i, &v) in self.active().iter().zip(theta) {
            full[i] = v;
        }
        ArCoefficients {
            alpha: full[0],
            beta: full[1],
            gamma: full[2],
            delta: full[3],
            sigma: full[4].exp(),
        }
    }

    /// Unconstrained parameter vector from full coefficients (dropping removed ones).
    pub fn theta_from(&self, coef: &ArCoefficients) -> Vec<f64> {
        let full = [
            coef.alpha,
            coef.beta,
            coef.gamma,
            coef.delta,
            coef.sigma.ln(),
        ];
        self.active().iter().map(|&i| full[i]).collect()
    }

    /// Assembles the `(t, y, u, w)` table.
    pub fn dataset(&self, y: &[f64], u: &[f64], w: &[f64]) -> Result<Dataset> {
        let rows = self.steps + 1;
        if y.len() != rows || u.len() < rows || w.len() < rows {
            return Err(Error::shape(
                "ar dataset",
                format!("{} values for {rows} rows", y.len()),
            ));
        }
        let mut data = Vec::with_capacity(4 * rows);
        for t in 0..rows {
            data.extend_from_slice(&[t as f64, y[t], u[t], w[t]]);
        }
        Dataset::new(rows, 4, data)
    }

    pub fn simulate_with(&self, coef: &ArCoefficients, rng: &mut dyn RngCore) -> Result<Dataset> {
        let (u, w) = synthetic_covariates(self.steps + 1, rng);
        let mut y = vec![0.0];
        y.extend(simulate_ar(
            self.variant,
            coef,
            &u,
            &w,
            0.0,
            self.steps,
            rng,
        )?);
        self.dataset(&y, &u, &w)
    }

    fn residuals<'a>(
        &'a self,
        data: &'a Dataset,
        c: &'a ArCoefficients,
    ) -> impl Iterator<Item = (f64, [f64; 3])> + 'a {
        let on = self.variant.uses();
        (0..data.rows - 1).map(move |t| {
            let r = data.row(t);
            let next = data.row(t + 1)[1];
            let (y, u, w) = (r[1], r[2], r[3]);
            let mean = c.alpha
                + if on[1] { c.beta * y } else { 0.0 }
                + if on[2] { c.gamma * u } else { 0.0 }
                + if on[3] { c.delta * w } else { 0.0 };
            (next - mean, [y, u, w])
        })
    }
}

impl GenerativeModel for ArModel {
    fn name(&self) -> &str {
        match self.variant {
            ArVariant::M0 => "ar-m0",
            ArVariant::M1 => "ar-m1",
            ArVariant::M2 => "ar-m2",
            ArVariant::M3 => "ar-m3",
        }
    }

    fn param_names(&self) -> Vec<String> {
        self.active()
            .iter()
            .map(|&i| String::from(NAMES[i]))
            .collect()
    }

    fn transforms(&self) -> Vec<Transform> {
        self.active()
            .iter()
            .map(|&i| {
                if i == 4 {
                    Transform::Log
                } else {
                    Transform::Identity
                }
            })
            .collect()
    }

    fn sample_prior(&self, _context: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self.active()
            .iter()
            .map(|&i| PRIOR_MEAN[i] + PRIOR_SD[i] * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn prior_log_density(&self, theta: &[f64], _context: &[f64]) -> f64 {
        self.active()
            .iter()
            .zip(theta)
            .map(|(&i, &x)| math::normal_log_pdf(x, PRIOR_MEAN[i], PRIOR_SD[i]))
            .sum()
    }

    fn prior_log_density_grad(&self, theta: &[f64], context: &[f64]) -> (f64, Vec<f64>) {
        let g = self
            .active()
            .iter()
            .zip(theta)
            .map(|(&i, &x)| -(x - PRIOR_MEAN[i]) / (PRIOR_SD[i] * PRIOR_SD[i]))
            .collect();
        (self.prior_log_density(theta, context), g)
    }

    fn simulate(&self, theta: &[f64], _context: &[f64], rng: &mut dyn RngCore) -> Result<Dataset> {
        if theta.len() != self.param_dim() {
            return Err(Error::shape(
                "ar simulate",
                format!("θ has {} entries", theta.len()),
            ));
        }
        self.simulate_with(&self.coefficients(theta), rng)
    }

    fn log_likelihood(&self, data: &Dataset, theta: &[f64]) -> Option<f64> {
        if data.cols != 4 || data.rows < 2 {
            return None;
        }
        let c = self.coefficients(theta);
        Some(
            self.residuals(data, &c)
                .map(|(r, _)| math::normal_log_pdf(r, 0.0, c.sigma))
                .sum(),
        )
    }

    fn log_likelihood_grad(&self, data: &Dataset, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let v = self.log_likelihood(data, theta)?;
        let c = self.coefficients(theta);
        let s2 = c.sigma * c.sigma;
        let mut full = [0.0; 5];
        for (r, x) in self.residuals(data, &c) {
            full[0] += r / s2;
            full[1] += r * x[0] / s2;
            full[2] += r * x[1] / s2;
            full[3] += r * x[2] / s2;
            full[4] += -1.0 + r * r / s2;
        }
        Some((v, self.active().iter().map(|&i| full[i]).collect()))
    }

    fn summary_input(&self, data: &Dataset) -> Tensor {
        let mut v = Vec::with_capacity(3 * data.rows);
        for i in 0..data.rows {
            v.extend_from_slice(&data.row(i)[1..4]);
        }
        Tensor::new(vec![data.rows, 3], v).expect("ar rows")
    }

    fn summary_input_dim(&self) -> usize {
        3
    }

    fn likelihood_rows(&self, data: &Dataset) -> (Tensor, Tensor) {
        let n = data.rows - 1;
        let mut target = Vec::with_capacity(n);
        let mut ctx = Vec::with_capacity(3 * n);
        for t in 0..n {
            target.push(data.row(t + 1)[1]);
            ctx.extend_from_slice(&data.row(t)[1..4]);
        }
        (
            Tensor::new(vec![n, 1], target).expect("targets"),
            Tensor::new(vec![n, 3], ctx).expect("contexts"),
        )
    }

    fn likelihood_target_dim(&self) -> usize {
        1
    }

    fn likelihood_row_context_dim(&self) -> usize {
        3
    }
}
