use alloc::format;
use alloc::vec::Vec;
use nalgebra::DMatrix;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::{Rng, RngCore};
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::LN_2PI;

/// Normal distribution given by its mean and the lower Cholesky factor of
/// its covariance.
#[derive(Clone, Debug)]
pub struct MultivariateNormal {
    mean: Vec<f64>,
    /// Row-major lower-triangular factor.
    chol: Vec<f64>,
    log_det: f64,
}

impl MultivariateNormal {
    /// `cov` is row-major `d × d`; fails when it is not positive definite.
    pub fn new(mean: Vec<f64>, cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::shape(
                "multivariate normal",
                format!("covariance of length {} for dimension {d}", cov.len()),
            ));
        }
        let m = DMatrix::from_row_slice(d, d, cov);
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?
            .unpack();
        let mut lower = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                lower.push(chol[(i, j)]);
            }
        }
        let log_det = 2.0 * (0..d).map(|i| lower[i * d + i].ln()).sum::<f64>();
        Ok(MultivariateNormal {
            mean,
            chol: lower,
            log_det,
        })
    }

    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        let d = mean.len();
        let mut cov = alloc::vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = variances[i];
        }
        Self::new(mean, &cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `mean + L z`.
    fn transform(&self, z: &[f64], scale: f64) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                self.mean[i] + scale * (0..=i).map(|j| self.chol[i * d + j] * z[j]).sum::<f64>()
            })
            .collect()
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    fn mahalanobis(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut u = alloc::vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|j| self.chol[i * d + j] * u[j]).sum();
            u[i] = (x[i] - self.mean[i] - s) / self.chol[i * d + i];
        }
        u.iter().map(|v| v * v).sum()
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.transform(&z, 1.0)
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.mahalanobis(x))
    }
}

/// Multivariate Student-t with location, scale matrix and degrees of freedom.
#[derive(Clone, Debug)]
pub struct MultivariateT {
    base: MultivariateNormal,
    df: f64,
    chi: ChiSquared<f64>,
}

impl MultivariateT {
    pub fn new(location: Vec<f64>, scale: &[f64], df: f64) -> Result<Self> {
        let chi = ChiSquared::new(df)
            .map_err(|e| Error::Config(format!("degrees of freedom {df}: {e}")))?;
        Ok(MultivariateT {
            base: MultivariateNormal::new(location, scale)?,
            df,
            chi,
        })
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z: Vec<f64> = (0..self.base.dim())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let w = self.chi.sample(rng);
        self.base.transform(&z, (self.df / w).sqrt())
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.base.dim() as f64;
        let nu = self.df;
        libm::lgamma(0.5 * (nu + d))
            - libm::lgamma(0.5 * nu)
            - 0.5 * d * (nu * core::f64::consts::PI).ln()
            - 0.5 * self.base.log_det
            - 0.5 * (nu + d) * (self.base.mahalanobis(x) / nu).ln_1p()
    }
}
