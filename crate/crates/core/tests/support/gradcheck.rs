//! Finite-difference checks of whole training objectives.

use abmc_core::models::{
    ArModel, ArVariant, GaussianLocationModel, RaceVariant, RacingDiffusionModel,
};
use abmc_core::nn::{
    Activation, Classifier, ClassifierConfig, FlowConfig, NetworkConfig, SummaryConfig, Surrogate,
};
use abmc_core::rng;
use abmc_core::tensor::{ParamStore, Tape, Var};
use abmc_core::training::{batch_loss, classifier_sc_objective, sc_variance_term};
use abmc_core::{Dataset, GenerativeModel, Result, Tensor};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

pub fn jitter(store: &mut ParamStore, rng: &mut dyn RngCore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for w in store.value_mut(id).data_mut() {
            *w += 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Largest relative error over up to `coords` sampled parameter coordinates,
/// and the norm-wise relative error over the same sample.
pub fn check(
    store: &mut ParamStore,
    coords: usize,
    rng: &mut dyn RngCore,
    eval: &dyn Fn(&ParamStore, &mut Tape) -> Result<Var>,
) -> (f64, f64) {
    let mut tape = Tape::new();
    let loss = eval(store, &mut tape).unwrap();
    tape.backward(loss, store).unwrap();
    let ids: Vec<_> = store.ids().collect();
    let all: Vec<(usize, usize)> = ids
        .iter()
        .enumerate()
        .flat_map(|(i, &id)| (0..store.value(id).numel()).map(move |k| (i, k)))
        .collect();
    let picked: Vec<(usize, usize)> = if all.len() <= coords {
        all
    } else {
        (0..coords)
            .map(|_| all[rng.random_range(0..all.len())])
            .collect()
    };
    let analytic: Vec<f64> = picked
        .iter()
        .map(|&(i, k)| store.grad(ids[i]).unwrap()[k])
        .collect();
    let mut numeric = Vec::with_capacity(picked.len());
    for &(i, k) in &picked {
        let x0 = store.value(ids[i]).data()[k];
        let h = 1e-5 * (1.0 + x0.abs());
        let f = |x: f64, store: &mut ParamStore| {
            store.value_mut(ids[i]).data_mut()[k] = x;
            let mut t = Tape::new();
            let v = eval(store, &mut t).unwrap();
            t.item(v).unwrap()
        };
        let d = (f(x0 + h, store) - f(x0 - h, store)) / (2.0 * h);
        store.value_mut(ids[i]).data_mut()[k] = x0;
        numeric.push(d);
    }
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        let err = (a - n).abs();
        // Differences below the finite-difference noise floor carry no signal.
        if err > 1e-7 {
            worst = worst.max(err / a.abs().max(n.abs()));
        }
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    assert!(scale > 1e-6, "vanishing gradient sample");
    let normwise = diff / scale;
    (worst, normwise)
}

pub fn small_net(summary: SummaryConfig, likelihood: bool, act: Activation) -> NetworkConfig {
    NetworkConfig {
        summary,
        posterior: FlowConfig::new(2, 6, act),
        likelihood: likelihood.then(|| FlowConfig::new(2, 6, act)),
        l2: 0.0,
    }
}

pub fn deepset() -> SummaryConfig {
    SummaryConfig::DeepSet {
        hidden: 6,
        equivariant_modules: 1,
        output: 3,
    }
}

pub fn joint(
    model: &dyn GenerativeModel,
    n: usize,
    r: &mut dyn RngCore,
) -> (Vec<Vec<f64>>, Vec<Dataset>) {
    (0..n).map(|_| model.sample_joint(r).unwrap()).unzip()
}

pub fn posterior_instance(
    model: &dyn GenerativeModel,
    cfg: NetworkConfig,
    seed: u64,
) -> (f64, f64) {
    let mut r = rng::stream(seed, &[1]);
    let mut s = Surrogate::for_model(&cfg, model, seed);
    jitter(&mut s.store, &mut r);
    let (thetas, data) = joint(model, 3, &mut r);
    let refs: Vec<&Dataset> = data.iter().collect();
    let mut store = std::mem::replace(&mut s.store, ParamStore::new(0.0));
    let out = check(&mut store, 40, &mut r, &|st, tape| {
        let mut probe = s.clone();
        probe.store = st.clone();
        let parts = batch_loss(tape, &probe, model, &thetas, &refs)?;
        parts.total(tape)
    });
    s.store = store;
    out
}

pub fn sc_instance(seed: u64) -> (f64, f64) {
    let model = GaussianLocationModel::fixed(2, 4, 1.0);
    let mut r = rng::stream(seed, &[2]);
    let mut s = Surrogate::for_model(&small_net(deepset(), false, Activation::Mish), &model, seed);
    jitter(&mut s.store, &mut r);
    let (_, data) = joint(&model, 2, &mut r);
    let refs: Vec<&Dataset> = data.iter().collect();
    let draws = 4;
    let noise: Vec<f64> = (0..2 * draws * 2)
        .map(|_| r.sample::<f64, _>(StandardNormal))
        .collect();
    let noise = Tensor::new(vec![2 * draws, 2], noise).unwrap();
    let mut store = std::mem::replace(&mut s.store, ParamStore::new(0.0));
    check(&mut store, 40, &mut r, &|st, tape| {
        let mut probe = s.clone();
        probe.store = st.clone();
        sc_variance_term(tape, &probe, &model, &refs, noise.clone(), draws)
    })
}

pub fn classifier_instance(seed: u64) -> (f64, f64) {
    let m0 = GaussianLocationModel::fixed(1, 5, 1.0);
    let m1 = GaussianLocationModel::fixed(1, 5, 4.0);
    let mut r = rng::stream(seed, &[3]);
    let cfg = ClassifierConfig {
        summary: deepset(),
        hidden: 6,
        activation: Activation::Silu,
        l2: 0.0,
    };
    let mut c = Classifier::new(&cfg, 2, 1, 0, seed);
    jitter(&mut c.store, &mut r);
    let a = m0.sample_joint(&mut r).unwrap().1;
    let b = m1.sample_joint(&mut r).unwrap().1;
    let u = m1.sample_joint(&mut r).unwrap().1;
    let marg = vec![vec![m0.log_evidence(&u), m1.log_evidence(&u)]];
    let mut store = std::mem::replace(&mut c.store, ParamStore::new(0.0));
    let out = check(&mut store, 40, &mut r, &|st, tape| {
        let mut probe = c.clone();
        probe.store = st.clone();
        Ok(classifier_sc_objective(
            tape,
            &probe,
            &m0,
            &[(0, &a), (1, &b)],
            &[&u],
            &marg,
            &[0.5, 0.5],
            0.7,
        )?
        .total)
    });
    c.store = store;
    out
}

/// The `i`-th check instance, cycling through six objective families.
/// Returns a label and `(worst elementwise, normwise)` relative errors.
pub fn instance(i: u64) -> (&'static str, (f64, f64)) {
    let gaussian = GaussianLocationModel::fixed(2, 4, 1.0);
    let ar = ArModel::new(ArVariant::M2);
    let race = RacingDiffusionModel::new(RaceVariant::M1, 6);
    let gru = SummaryConfig::Recurrent {
        hidden: 5,
        dense: 6,
        output: 3,
    };
    match i % 6 {
        0 => (
            "npe deepset",
            posterior_instance(&gaussian, small_net(deepset(), false, Activation::Mish), i),
        ),
        1 => (
            "npe recurrent",
            posterior_instance(&ar, small_net(gru, false, Activation::Elu), i),
        ),
        2 => (
            "nlpe gaussian",
            posterior_instance(&gaussian, small_net(deepset(), true, Activation::Silu), i),
        ),
        3 => (
            "nlpe race",
            posterior_instance(&race, small_net(deepset(), true, Activation::Tanh), i),
        ),
        4 => ("sc variance", sc_instance(i)),
        _ => ("classifier", classifier_instance(i)),
    }
}
