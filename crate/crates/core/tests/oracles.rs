use abmc_core::models::{
    ArModel, ArVariant, GaussianLocationModel, RaceVariant, RacingDiffusionModel,
};
use abmc_core::oracles::{
    bridge_sampling_log_evidence, find_map, gaussian_quadrature_log_evidence,
    laplace_is_log_evidence, potential_scale_reduction, rwm_sample, BridgeConfig, EvidenceTarget,
    LaplaceConfig, MapConfig, ModelTarget, RwmConfig,
};
use abmc_core::{rng, Dataset, GenerativeModel};

fn chain_from_map(target: &ModelTarget, steps: usize, seed: u64) -> abmc_core::oracles::McmcChain {
    let d = target.dim();
    let init = find_map(target, &vec![0.0; d], &MapConfig::default()).unwrap();
    let f = |x: &[f64]| target.log_joint(x);
    rwm_sample(
        &f,
        &init,
        &RwmConfig::new(steps),
        &mut rng::stream(seed, &[1]),
    )
    .unwrap()
}

#[test]
fn oracle_triangle_on_conjugate_cases() {
    for dim in 1..=3 {
        let model = GaussianLocationModel::fixed(dim, 10, 1.0);
        let (_, data) = model
            .sample_joint(&mut rng::stream(30 + dim as u64, &[]))
            .unwrap();
        let truth = model.log_evidence(&data);
        let quad = gaussian_quadrature_log_evidence(&model, &data, 512).unwrap();
        assert!(
            (quad - truth).abs() < 1e-6,
            "D={dim}: quadrature {quad} vs {truth}"
        );

        let target = ModelTarget::new(&model, &data).unwrap();
        let lis = laplace_is_log_evidence(
            &target,
            &vec![0.0; dim],
            &LaplaceConfig::new(100_000),
            &mut rng::stream(dim as u64, &[2]),
        )
        .unwrap();
        assert!(
            (lis.log_ml - truth).abs() < 0.02,
            "D={dim}: laplace {} vs {truth}",
            lis.log_ml
        );

        let chain = chain_from_map(&target, 40_000, dim as u64);
        let br = bridge_sampling_log_evidence(
            &target,
            &chain,
            &BridgeConfig::new(20_000),
            &mut rng::stream(dim as u64, &[3]),
        )
        .unwrap();
        assert!(
            (br.log_ml - truth).abs() < 0.02,
            "D={dim}: bridge {} vs {truth}",
            br.log_ml
        );
    }
}

fn ar_series(variant: ArVariant, seed: u64) -> (ArModel, Dataset) {
    let model = ArModel::new(variant);
    let (_, data) = model.sample_joint(&mut rng::stream(seed, &[])).unwrap();
    (model, data)
}

#[test]
fn ar_chains_converge() {
    let (model, data) = ar_series(ArVariant::M2, 40);
    let target = ModelTarget::new(&model, &data).unwrap();
    let f = |x: &[f64]| target.log_joint(x);
    let chains: Vec<_> = (0..4u64)
        .map(|c| {
            let init: Vec<f64> = model.sample_prior(&[], &mut rng::stream(41, &[c]));
            rwm_sample(
                &f,
                &init,
                &RwmConfig::new(20_000),
                &mut rng::stream(42, &[c]),
            )
            .unwrap()
        })
        .collect();
    let rhat = potential_scale_reduction(&chains).unwrap();
    assert_eq!(rhat.len(), 4);
    assert!(rhat.iter().all(|r| *r < 1.05), "{rhat:?}");
}

#[test]
fn ar_laplace_and_bridge_agree() {
    let (model, data) = ar_series(ArVariant::M1, 43);
    let target = ModelTarget::new(&model, &data).unwrap();
    let lis = laplace_is_log_evidence(
        &target,
        &[0.0; 4],
        &LaplaceConfig::new(100_000),
        &mut rng::stream(44, &[]),
    )
    .unwrap();
    let chain = chain_from_map(&target, 40_000, 45);
    let br = bridge_sampling_log_evidence(
        &target,
        &chain,
        &BridgeConfig::new(20_000),
        &mut rng::stream(46, &[]),
    )
    .unwrap();
    assert!(
        (lis.log_ml - br.log_ml).abs() < 0.05,
        "laplace {} vs bridge {}",
        lis.log_ml,
        br.log_ml
    );
}

#[test]
fn race_laplace_and_bridge_agree() {
    let model = RacingDiffusionModel::new(RaceVariant::M1, 64);
    let (_, data) = model.sample_joint(&mut rng::stream(47, &[])).unwrap();
    let target = ModelTarget::new(&model, &data).unwrap();
    let d = model.param_dim();
    assert_eq!(d, 5);
    let lis = laplace_is_log_evidence(
        &target,
        &vec![0.0; d],
        &LaplaceConfig::new(50_000),
        &mut rng::stream(48, &[]),
    )
    .unwrap();
    let chain = chain_from_map(&target, 30_000, 49);
    let br = bridge_sampling_log_evidence(
        &target,
        &chain,
        &BridgeConfig::new(20_000),
        &mut rng::stream(50, &[]),
    )
    .unwrap();
    assert!(
        (lis.log_ml - br.log_ml).abs() < 0.1,
        "laplace {} vs bridge {}",
        lis.log_ml,
        br.log_ml
    );
}
