//! Squared maximum mean discrepancy between a batch of summaries and a
//! reference batch, used to pull the summary space toward a standard normal.

use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{Tape, Tensor, Var};

/// `rows × cols` tensor of independent standard normal draws.
pub fn standard_normal_tensor(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(alloc::vec![rows, cols], data).expect("consistent shape")
}

fn squared_distances(a: &[f64], b: &[f64], width: usize) -> Vec<f64> {
    let (na, nb) = (a.len() / width, b.len() / width);
    let mut out = Vec::with_capacity(na * nb);
    for i in 0..na {
        for j in 0..nb {
            let d: f64 = (0..width)
                .map(|k| (a[i * width + k] - b[j * width + k]).powi(2))
                .sum();
            out.push(d);
        }
    }
    out
}

/// Median pairwise squared distance over the pooled batch (distinct pairs).
fn median_bandwidth(x: &[f64], y: &[f64], width: usize) -> f64 {
    let mut pooled = x.to_vec();
    pooled.extend_from_slice(y);
    let n = pooled.len() / width;
    let all = squared_distances(&pooled, &pooled, width);
    let pairs: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| all[i * n + j])
        .collect();
    let h2 = math::median(&pairs);
    if h2 > 0.0 && h2.is_finite() {
        h2
    } else {
        1.0
    }
}

/// Mean Gaussian-kernel value between rows of `a` (on the tape) and rows of
/// the constant `b`.
fn mean_kernel(tape: &mut Tape, a: Var, b: Var, h2: f64) -> Result<Var> {
    let sa = tape.square(a)?;
    let na = tape.sum_axis(sa, 1)?;
    let rows_a = tape.shape(na)[0];
    let na = tape.reshape(na, &[rows_a, 1])?;
    let sb = tape.square(b)?;
    let nb = tape.sum_axis(sb, 1)?;
    let rows_b = tape.shape(nb)[0];
    let nb = tape.reshape(nb, &[1, rows_b])?;
    let bt = tape.transpose(b)?;
    let cross = tape.matmul(a, bt)?;
    let cross = tape.mul_scalar(cross, -2.0)?;
    let d = tape.add(na, nb)?;
    let d = tape.add(d, cross)?;
    let k = tape.mul_scalar(d, -0.5 / h2)?;
    let k = tape.exp(k)?;
    tape.mean(k)
}

/// Biased (V-statistic) squared MMD between `summaries` `[B, k]` and the
/// reference batch, Gaussian kernel with the median-heuristic bandwidth
/// computed on the pooled batch and held fixed for differentiation.
pub fn mmd_penalty(tape: &mut Tape, summaries: Var, reference: &Tensor) -> Result<Var> {
    let s = tape.shape(summaries).to_vec();
    if s.len() != 2 || s[0] < 2 {
        return Err(Error::usage("MMD needs a batch of at least two summaries"));
    }
    if reference.shape() != s.as_slice() {
        return Err(Error::shape(
            "mmd_penalty",
            alloc::format!("{s:?} vs reference {:?}", reference.shape()),
        ));
    }
    let h2 = median_bandwidth(tape.data(summaries), reference.data(), s[1]);
    let y = tape.constant(reference.clone());
    let kxx = mean_kernel(tape, summaries, summaries, h2)?;
    let kxy = mean_kernel(tape, summaries, y, h2)?;
    let kyy = mean_kernel(tape, y, y, h2)?;
    let two_kxy = tape.mul_scalar(kxy, 2.0)?;
    let total = tape.add(kxx, kyy)?;
    tape.sub(total, two_kxy)
}
