//! Synthetic out-of-distribution datasets standing in for real observations.

use alloc::vec::Vec;
use rand::{Rng, RngCore};

use super::{
    ArCoefficients, ArModel, ArVariant, Dataset, GaussianLocationModel, GenerativeModel,
    RacingDiffusionModel,
};
use crate::error::Result;

#[derive(Clone, Debug)]
pub enum OodSpec {
    /// `N(shift · 1, σ_y² I)` observations; `shift = 0` is the in-distribution control.
    Gaussian {
        model: GaussianLocationModel,
        shift: f64,
    },
    /// Prior-predictive race data with response times scaled by `rt_scale`
    /// and a fraction of trials replaced by uniform outliers on `[t0, upper]`.
    Diffusion {
        model: RacingDiffusionModel,
        rt_scale: f64,
        outlier_fraction: f64,
        upper: f64,
    },
    /// Full-model series with the autoregressive coefficient pinned at `beta`,
    /// outside the prior's 99% envelope.
    Ar { steps: usize, beta: f64 },
}

impl OodSpec {
    pub fn gaussian(model: GaussianLocationModel, shift: f64) -> Self {
        OodSpec::Gaussian { model, shift }
    }

    pub fn diffusion(model: RacingDiffusionModel) -> Self {
        OodSpec::Diffusion {
            model,
            rt_scale: 1.5,
            outlier_fraction: 0.05,
            upper: 3.0,
        }
    }

    pub fn ar() -> Self {
        OodSpec::Ar {
            steps: super::AR_STEPS,
            beta: 0.6,
        }
    }
}

/// `count` unlabeled datasets from the contaminating process.
pub fn make_ood_datasets(
    spec: &OodSpec,
    count: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Dataset>> {
    (0..count).map(|_| one(spec, rng)).collect()
}

fn one(spec: &OodSpec, rng: &mut dyn RngCore) -> Result<Dataset> {
    match spec {
        OodSpec::Gaussian { model, shift } => {
            let mu = alloc::vec![*shift; model.dim];
            model.simulate(&mu, &model.reference_context(), rng)
        }
        OodSpec::Diffusion {
            model,
            rt_scale,
            outlier_fraction,
            upper,
        } => {
            let theta = model.sample_prior(&[], rng);
            let p = model.params(&theta);
            let mut data = model.simulate_params(&p, rng)?;
            let t0 = model.t0(&data, p.tau);
            for i in 0..data.rows {
                let rt = data.data[2 * i];
                data.data[2 * i] = if rng.random::<f64>() < *outlier_fraction {
                    let v = rng.random_range(t0..*upper);
                    if rng.random::<bool>() {
                        v
                    } else {
                        -v
                    }
                } else {
                    rt * rt_scale
                };
            }
            Ok(data)
        }
        OodSpec::Ar { steps, beta } => {
            let model = ArModel {
                variant: ArVariant::M0,
                steps: *steps,
            };
            let theta = model.sample_prior(&[], rng);
            let mut c: ArCoefficients = model.coefficients(&theta);
            c.beta = *beta;
            model.simulate_with(&c, rng)
        }
    }
}
