use abmc_core::evidence::{
    bayes_factor, estimate_log_ml, estimate_log_ml_nlpe, estimate_log_ml_npe, pmps_from_evidences,
    uniform_prior, ExactLikelihood, LikelihoodDensity, PosteriorDensity,
};
use abmc_core::math;
use abmc_core::models::{ConjugatePosterior, GaussianLocationModel};
use abmc_core::nn::{Activation, Condition, ConditionalFlow, FlowConfig};
use abmc_core::rng;
use abmc_core::tensor::{ParamStore, Tape};
use abmc_core::training::{
    classifier_sc_variance, nlpe_loss, npe_loss, sc_variance_value, WarmupSchedule,
};
use abmc_core::{Dataset, GenerativeModel, Result, Tensor};
use proptest::prelude::*;
use rand::RngCore;

/// The exact likelihood with every log density shifted by `shift` and scaled by `scale`.
struct DistortedLikelihood<'a> {
    model: &'a dyn GenerativeModel,
    shift: f64,
    scale: f64,
}

impl LikelihoodDensity for DistortedLikelihood<'_> {
    fn log_likelihood_batch(&self, data: &Dataset, thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(ExactLikelihood(self.model)
            .log_likelihood_batch(data, thetas)?
            .into_iter()
            .map(|v| self.scale * v + self.shift)
            .collect())
    }
}

/// A posterior that ignores the data and returns the prior.
struct PriorAsPosterior<'a>(&'a GaussianLocationModel);

impl PosteriorDensity for PriorAsPosterior<'_> {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn sample_with_log_prob(
        &self,
        _data: &Dataset,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<(Vec<f64>, f64)>> {
        Ok((0..count)
            .map(|_| {
                let t = self.0.sample_prior(&[], rng);
                let lp = self.0.prior_log_density(&t, &[]);
                (t, lp)
            })
            .collect())
    }

    fn log_prob(&self, theta: &[f64], _data: &Dataset) -> Result<f64> {
        Ok(self.0.prior_log_density(theta, &[]))
    }
}

/// The exact posterior with its log density offset by `c` (an unnormalized density).
struct OffsetPosterior {
    inner: ConjugatePosterior,
    c: f64,
}

impl PosteriorDensity for OffsetPosterior {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample_with_log_prob(
        &self,
        data: &Dataset,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<(Vec<f64>, f64)>> {
        Ok(self
            .inner
            .sample_with_log_prob(data, count, rng)?
            .into_iter()
            .map(|(t, l)| (t, l + self.c))
            .collect())
    }

    fn log_prob(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        Ok(self.inner.log_prob(theta, data)? + self.c)
    }
}

fn gaussian_data(dim: usize, n: usize, seed: u64) -> (GaussianLocationModel, Vec<f64>, Dataset) {
    let model = GaussianLocationModel::fixed(dim, n, 1.0);
    let (theta, data) = model.sample_joint(&mut rng::stream(seed, &[])).unwrap();
    (model, theta, data)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pmps_are_shift_invariant_and_normalized(
        evidences in prop::collection::vec(-50.0f64..50.0, 2..6),
        c in -1e3f64..1e3,
    ) {
        let prior = uniform_prior(evidences.len());
        let p = pmps_from_evidences(&evidences, &prior).unwrap();
        let shifted: Vec<f64> = evidences.iter().map(|e| e + c).collect();
        let q = pmps_from_evidences(&shifted, &prior).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_one_evidence_raises_its_probability(
        evidences in prop::collection::vec(-10.0f64..10.0, 2..5),
        bump in 0.01f64..5.0,
    ) {
        let prior = uniform_prior(evidences.len());
        let before = pmps_from_evidences(&evidences, &prior).unwrap();
        let mut raised = evidences.clone();
        raised[0] += bump;
        let after = pmps_from_evidences(&raised, &prior).unwrap();
        prop_assert!(after[0] > before[0]);
    }

    #[test]
    fn bayes_factor_matches_two_model_pmps(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let p = pmps_from_evidences(&[a, b], &uniform_prior(2)).unwrap();
        let bf = bayes_factor(a, b);
        prop_assert!(((p[0] / p[1]) - bf).abs() / bf < 1e-10);
    }

    #[test]
    fn schedule_is_monotone(zero_until in 0usize..40, ramp in 0usize..40, e in 0usize..100) {
        let s = WarmupSchedule::new(zero_until, zero_until + ramp).unwrap();
        let (a, b) = (s.lambda(e), s.lambda(e + 1));
        prop_assert!(a <= b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn classifier_variance_is_shift_invariant(
        log_q in prop::collection::vec(-5.0f64..0.0, 3),
        marg in prop::collection::vec(-30.0f64..0.0, 3),
        c in -10.0f64..10.0,
    ) {
        let prior = uniform_prior(3);
        let v = classifier_sc_variance(&log_q, &marg, &prior).unwrap();
        let shifted: Vec<f64> = marg.iter().map(|m| m + c).collect();
        let w = classifier_sc_variance(&log_q, &shifted, &prior).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!((v - w).abs() <= 1e-9 * (1.0 + v));
    }

    #[test]
    fn variance_ignores_a_common_offset(seed in 0u64..1000, c in -20.0f64..20.0) {
        // Offsetting the likelihood by c and the posterior by c moves every
        // Bayes-identity term by the same amount.
        let (model, _, data) = gaussian_data(1, 10, seed);
        let prior_post = PriorAsPosterior(&model);
        let exact = ExactLikelihood(&model);
        let shifted = DistortedLikelihood { model: &model, shift: c, scale: 1.0 };
        let offset = OffsetPosterior { inner: ConjugatePosterior { model: model.clone() }, c };
        let v0 = sc_variance_value(&prior_post, &model, &exact, &data, 32, &mut rng::stream(seed, &[1])).unwrap();
        let v1 = sc_variance_value(&prior_post, &model, &shifted, &data, 32, &mut rng::stream(seed, &[1])).unwrap();
        prop_assert!((v0 - v1).abs() <= 1e-9 * (1.0 + v0));
        let v2 = sc_variance_value(&offset, &model, &shifted, &data, 32, &mut rng::stream(seed, &[1])).unwrap();
        prop_assert!(v2.abs() < 1e-10);
    }

    #[test]
    fn coupling_flow_inverts(seed in 0u64..500, dim in 1usize..5, cond_dim in 0usize..3) {
        let mut r = rng::stream(seed, &[]);
        let mut store = ParamStore::new(0.0);
        let mut cfg = FlowConfig::new(4, 8, Activation::Mish);
        cfg.output_gain = 1.0;
        let flow = ConditionalFlow::new(&mut store, "f", dim, cond_dim, &cfg, &mut r);
        let z = abmc_core::nn::standard_normal_tensor(5, dim, &mut r);
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let cond = if cond_dim == 0 {
            Condition::none()
        } else {
            Condition::rows(tape.constant(abmc_core::nn::standard_normal_tensor(5, cond_dim, &mut r)))
        };
        let (x, ld) = flow.forward(&mut tape, &store, zv, cond).unwrap();
        let (z2, ld_inv) = flow.inverse(&mut tape, &store, x, cond).unwrap();
        for (a, b) in tape.data(z2).iter().zip(z.data()) {
            prop_assert!((a - b).abs() < 1e-5);
        }
        for (a, b) in tape.data(ld).iter().zip(tape.data(ld_inv)) {
            prop_assert!((a + b).abs() < 1e-8);
        }
    }
}

#[test]
fn exact_stubs_reproduce_the_analytic_evidence() {
    for (dim, n, seed) in [(1, 1, 1), (1, 10, 2), (2, 7, 3), (3, 50, 4)] {
        let (model, _, data) = gaussian_data(dim, n, seed);
        let post = ConjugatePosterior {
            model: model.clone(),
        };
        let truth = model.log_evidence(&data);
        for s in [1, 16, 128] {
            let e =
                estimate_log_ml_npe(&post, &model, &data, s, &mut rng::stream(seed, &[s as u64]))
                    .unwrap();
            assert!((e.log_ml - truth).abs() < 1e-8);
            assert!(e.spread() < 1e-8);
            assert!(e.mc_std_error >= 0.0);
        }
        let v = sc_variance_value(
            &post,
            &model,
            &ExactLikelihood(&model),
            &data,
            16,
            &mut rng::stream(seed, &[9]),
        )
        .unwrap();
        assert!(v.abs() < 1e-10, "{v}");
    }
}

#[test]
fn closed_form_single_observation_evidence() {
    let model = GaussianLocationModel::fixed(1, 1, 1.0);
    let y0 = Dataset::new(1, 1, vec![0.0]).unwrap();
    let y5 = Dataset::new(1, 1, vec![5.0]).unwrap();
    let expected = -0.5 * (4.0 * std::f64::consts::PI).ln();
    assert!((model.log_evidence(&y0) - expected).abs() < 1e-12);
    assert!((model.log_evidence(&y5) - (expected - 25.0 / 4.0)).abs() < 1e-12);
}

#[test]
fn learned_likelihood_substitution() {
    let (model, _, data) = gaussian_data(1, 10, 5);
    let post = ConjugatePosterior {
        model: model.clone(),
    };
    let npe = estimate_log_ml_npe(&post, &model, &data, 64, &mut rng::stream(5, &[1])).unwrap();
    let exact = DistortedLikelihood {
        model: &model,
        shift: 0.0,
        scale: 1.0,
    };
    let same =
        estimate_log_ml_nlpe(&post, &exact, &model, &data, 64, &mut rng::stream(5, &[1])).unwrap();
    assert_eq!(npe.per_draw_terms, same.per_draw_terms);

    let c = 2.75;
    let biased = DistortedLikelihood {
        model: &model,
        shift: c,
        scale: 1.0,
    };
    let shifted =
        estimate_log_ml_nlpe(&post, &biased, &model, &data, 64, &mut rng::stream(5, &[1])).unwrap();
    assert!((shifted.log_ml - npe.log_ml - c).abs() < 1e-12);

    let scaled = DistortedLikelihood {
        model: &model,
        shift: 0.0,
        scale: 1.1,
    };
    let spread =
        estimate_log_ml_nlpe(&post, &scaled, &model, &data, 64, &mut rng::stream(5, &[1])).unwrap();
    assert!(spread.spread() > 1e-3);
}

#[test]
fn prior_as_posterior_has_positive_variance() {
    // Under the prior the Bayes-identity term reduces to the log likelihood,
    // so the penalty is the prior variance of ln p(y | θ), here computed
    // directly by Monte Carlo as an independent reference.
    let model = GaussianLocationModel::fixed(1, 10, 1.0);
    let data = abmc_core::models::make_ood_datasets(
        &abmc_core::models::OodSpec::gaussian(model.clone(), 5.0),
        1,
        &mut rng::stream(6, &[]),
    )
    .unwrap()
    .remove(0);
    let v = sc_variance_value(
        &PriorAsPosterior(&model),
        &model,
        &ExactLikelihood(&model),
        &data,
        4096,
        &mut rng::stream(6, &[1]),
    )
    .unwrap();
    let mut r = rng::stream(6, &[2]);
    let lik: Vec<f64> = (0..4096)
        .map(|_| {
            model
                .log_likelihood(&data, &model.sample_prior(&[], &mut r))
                .unwrap()
        })
        .collect();
    let reference = math::variance(&lik, 1);
    assert!(v > 1.0);
    assert!(
        (v - reference).abs() < 0.15 * reference,
        "{v} vs {reference}"
    );
}

#[test]
fn batch_losses_are_means() {
    let model = GaussianLocationModel::fixed(2, 5, 1.0);
    let post = ConjugatePosterior {
        model: model.clone(),
    };
    let mut r = rng::stream(7, &[]);
    let batch: Vec<(Vec<f64>, Dataset)> = (0..6)
        .map(|_| model.sample_joint(&mut r).unwrap())
        .collect();
    let single = npe_loss(&post, &batch).unwrap();
    let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
    assert!((npe_loss(&post, &doubled).unwrap() - single).abs() < 1e-12);
    let expected = -batch
        .iter()
        .map(|(t, d)| post.log_prob(t, d).unwrap())
        .sum::<f64>()
        / 6.0;
    assert!((single - expected).abs() < 1e-12);

    let exact = ExactLikelihood(&model);
    let joint = nlpe_loss(&post, &exact, &batch).unwrap();
    let lik = -batch
        .iter()
        .map(|(t, d)| model.log_likelihood(d, t).unwrap())
        .sum::<f64>()
        / 6.0;
    assert!((joint - (single + lik)).abs() < 1e-12);
    assert!(npe_loss(&post, &[]).is_err());
}

#[test]
fn estimator_rejects_zero_draws() {
    let (model, _, data) = gaussian_data(1, 3, 8);
    let post = ConjugatePosterior {
        model: model.clone(),
    };
    assert!(estimate_log_ml(
        &post,
        &model,
        &ExactLikelihood(&model),
        &data,
        0,
        "npe",
        &mut rng::stream(8, &[])
    )
    .is_err());
}

#[test]
fn d1_flow_density_normalizes() {
    let mut r = rng::stream(9, &[]);
    let mut store = ParamStore::new(0.0);
    let mut cfg = FlowConfig::new(6, 16, Activation::Mish);
    cfg.output_gain = 1.0;
    let flow = ConditionalFlow::new(&mut store, "f", 1, 2, &cfg, &mut r);
    let points = 8192;
    let (lo, hi) = (-15.0, 15.0);
    let h = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| lo + i as f64 * h).collect();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(points, 1, xs).unwrap());
    let c = tape.constant(Tensor::matrix(1, 2, vec![0.7, -1.3]).unwrap());
    let lp = flow
        .log_prob(&mut tape, &store, x, Condition::repeated(c, points))
        .unwrap();
    let dens: Vec<f64> = tape.data(lp).iter().map(|v| v.exp()).collect();
    let mass = h * (dens.iter().sum::<f64>() - 0.5 * (dens[0] + dens[points - 1]));
    assert!((mass - 1.0).abs() < 0.01, "{mass}");
}
