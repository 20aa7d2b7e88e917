use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;

use super::{EvidenceTarget, FnTarget};
use crate::error::{Error, Result};
use crate::math;
use crate::models::{Dataset, GaussianLocationModel, GenerativeModel};

/// `ln ∫ p(θ) p(y | θ) dθ` over `[lower, upper]` by Gauss–Legendre
/// quadrature with `nodes` nodes, summed in log space.
pub fn quadrature_log_evidence(
    target: &dyn EvidenceTarget,
    lower: f64,
    upper: f64,
    nodes: usize,
) -> Result<f64> {
    if target.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "quadrature over {} dimensions",
            target.dim()
        )));
    }
    if !(upper > lower) || nodes == 0 {
        return Err(Error::usage(format!(
            "quadrature over [{lower}, {upper}] with {nodes} nodes"
        )));
    }
    let (x, w) = math::gauss_legendre(nodes);
    let half = 0.5 * (upper - lower);
    let mid = 0.5 * (upper + lower);
    let terms: Vec<f64> = x
        .iter()
        .zip(&w)
        .map(|(&xi, &wi)| target.log_joint(&[mid + half * xi]) + (wi * half).ln())
        .collect();
    let v = math::log_sum_exp(&terms);
    if v.is_nan() {
        return Err(Error::NonFinite("quadrature evidence".into()));
    }
    Ok(v)
}

/// Coordinatewise quadrature for the Gaussian location model, whose
/// evidence factorizes over dimensions; each range covers ±10 prior sds.
pub fn gaussian_quadrature_log_evidence(
    model: &GaussianLocationModel,
    data: &Dataset,
    nodes: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let one = GaussianLocationModel {
        dim: 1,
        ..model.clone()
    };
    let half_width = 10.0 * model.prior_variance(&data.context).sqrt();
    for j in 0..model.dim {
        let column = Dataset::new(data.rows, 1, data.column(j).collect())?
            .with_context(data.context.clone());
        let target = FnTarget {
            dim: 1,
            prior: |t: &[f64]| one.prior_log_density(t, &column.context),
            likelihood: |t: &[f64]| one.log_likelihood(&column, t).unwrap_or(f64::NAN),
        };
        total += quadrature_log_evidence(&target, -half_width, half_width, nodes)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn flat_likelihood_integrates_the_prior() {
        let target = FnTarget {
            dim: 1,
            prior: |t: &[f64]| math::normal_log_pdf(t[0], 0.3, 1.2),
            likelihood: |_: &[f64]| 0.0,
        };
        let v = quadrature_log_evidence(&target, 0.3 - 12.0, 0.3 + 12.0, 512).unwrap();
        assert!(v.abs() < 1e-6, "{v}");
    }

    #[test]
    fn matches_analytic_gaussian_evidence() {
        for dim in 1..=3 {
            let model = GaussianLocationModel::fixed(dim, 10, 1.0);
            let (_, data) = model
                .sample_joint(&mut rng::stream(5, &[dim as u64]))
                .unwrap();
            let q = gaussian_quadrature_log_evidence(&model, &data, 512).unwrap();
            assert!((q - model.log_evidence(&data)).abs() < 1e-6);
            let q2 = gaussian_quadrature_log_evidence(&model, &data, 1024).unwrap();
            assert!((q - q2).abs() < 1e-8);
        }
    }

    #[test]
    fn multivariate_target_is_unsupported() {
        let target = FnTarget {
            dim: 2,
            prior: |_: &[f64]| 0.0,
            likelihood: |_: &[f64]| 0.0,
        };
        assert!(matches!(
            quadrature_log_evidence(&target, -1.0, 1.0, 8),
            Err(Error::Unsupported(_))
        ));
    }
}
