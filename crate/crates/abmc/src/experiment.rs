//! The end-to-end harness: simulate test and SC data, train every
//! (variant, method) surrogate, estimate evidences, run the oracles and
//! aggregate.

use std::fmt;
use std::path::Path;

use abmc_core::evidence::{estimate_log_ml_nlpe, estimate_log_ml_npe};
use abmc_core::models::{make_ood_datasets, OodSpec, RaceVariant, RacingDiffusionModel};
use abmc_core::nn::{NetworkConfig, Surrogate};
use abmc_core::oracles::{
    bridge_sampling_log_evidence, find_map, gaussian_quadrature_log_evidence,
    laplace_is_log_evidence, rwm_sample, BridgeConfig, EvidenceTarget, LaplaceConfig, MapConfig,
    ModelTarget, RwmConfig,
};
use abmc_core::rng::{self, stage};
use abmc_core::training::{train_with, EpochLoss, LossTrace, ScConfig};
use abmc_core::{Dataset, Error, GenerativeModel, Result};
use rayon::prelude::*;

use crate::config::{Candidate, Experiment, ExperimentConfig, Method, OracleMethod};
use crate::io::{self, IndexEntry, Layout};
use crate::report::{ComparisonReport, EvidenceRow};

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub jobs: usize,
    pub quiet: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 1,
            quiet: true,
        }
    }
}

impl RunOptions {
    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

/// A failure tagged with the pipeline stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait AtStage<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    /// `<group>-<index>`, e.g. `mu5-003`, `sim-M1-010`, `ood-000`.
    pub id: String,
    pub data: Dataset,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TestData {
    pub test: Vec<LabeledDataset>,
    /// Unlabeled datasets for the self-consistency penalty.
    pub sc: Vec<Dataset>,
}

fn ood_spec(cfg: &ExperimentConfig, shift: f64) -> Result<OodSpec> {
    Ok(match cfg.experiment {
        Experiment::Gaussian => {
            OodSpec::gaussian(cfg.gaussian_model().expect("gaussian experiment"), shift)
        }
        Experiment::Diffusion => {
            let trials = cfg
                .diffusion
                .clone()
                .unwrap_or_default()
                .trials_per_condition;
            OodSpec::diffusion(RacingDiffusionModel::new(RaceVariant::M0, trials))
        }
        Experiment::Ar => OodSpec::ar(),
    })
}

fn label(group: &str, sets: Vec<Dataset>) -> impl Iterator<Item = LabeledDataset> + '_ {
    sets.into_iter()
        .enumerate()
        .map(move |(i, data)| LabeledDataset {
            id: format!("{group}-{i:03}"),
            data,
        })
}

/// Test sets and SC datasets, each from its own stream.
pub fn simulate(cfg: &ExperimentConfig) -> Result<TestData> {
    let mut test = Vec::new();
    for (si, shift) in cfg.test.shifts.iter().enumerate() {
        let mut r = rng::stream(cfg.seed, &[stage::TEST_DATA, 0, si as u64]);
        let sets = make_ood_datasets(&ood_spec(cfg, *shift)?, cfg.test.count, &mut r)?;
        test.extend(label(&format!("mu{shift}"), sets));
    }
    for (gi, name) in cfg.test.generators.iter().enumerate() {
        let model = cfg.model(name)?;
        let sets = (0..cfg.test.count)
            .map(|i| {
                let mut r = rng::stream(cfg.seed, &[stage::TEST_DATA, 1, gi as u64, i as u64]);
                model.sample_joint(&mut r).map(|(_, d)| d)
            })
            .collect::<Result<Vec<_>>>()?;
        test.extend(label(&format!("sim-{name}"), sets));
    }
    let mut ood = Vec::new();
    if cfg.test.ood_count > 0 {
        let mut r = rng::stream(cfg.seed, &[stage::TEST_DATA, 2]);
        ood = make_ood_datasets(&ood_spec(cfg, 0.0)?, cfg.test.ood_count, &mut r)?;
        test.extend(label("ood", ood.clone()));
    }
    let sc = match &cfg.sc {
        Some(sc) if sc.from_test_sets => ood[..sc.datasets].to_vec(),
        Some(sc) => make_ood_datasets(
            &ood_spec(cfg, sc.shift)?,
            sc.datasets,
            &mut rng::stream(cfg.seed, &[stage::SC_DATA]),
        )?,
        None => Vec::new(),
    };
    Ok(TestData { test, sc })
}

pub fn write_datasets(layout: &Layout, experiment: Experiment, data: &TestData) -> Result<()> {
    let dir = layout.datasets();
    let mut index = Vec::new();
    for d in &data.test {
        let file = format!("{}.csv", d.id);
        io::write_dataset(&dir.join(&file), experiment, &d.data)?;
        index.push(IndexEntry {
            dataset_id: d.id.clone(),
            role: "test".into(),
            file,
        });
    }
    for (i, d) in data.sc.iter().enumerate() {
        let id = format!("sc-{i:03}");
        let file = format!("{id}.csv");
        io::write_dataset(&dir.join(&file), experiment, d)?;
        index.push(IndexEntry {
            dataset_id: id,
            role: "sc".into(),
            file,
        });
    }
    io::write_csv(&layout.dataset_index(), &index)
}

pub fn read_datasets(layout: &Layout) -> Result<TestData> {
    let dir = layout.datasets();
    let mut out = TestData::default();
    for e in io::read_csv::<IndexEntry>(&layout.dataset_index())? {
        let data = io::read_dataset(&dir.join(&e.file))?;
        match e.role.as_str() {
            "test" => out.test.push(LabeledDataset {
                id: e.dataset_id,
                data,
            }),
            "sc" => out.sc.push(data),
            other => {
                return Err(Error::Config(format!(
                    "dataset {} has unknown role {other:?}",
                    e.dataset_id
                )))
            }
        }
    }
    Ok(out)
}

pub struct Trained {
    pub variant: String,
    pub method: Method,
    pub surrogate: Surrogate,
    pub trace: LossTrace,
}

fn network_for(cfg: &ExperimentConfig, method: Method) -> NetworkConfig {
    let mut net = cfg.network.clone();
    if !method.learns_likelihood() {
        net.likelihood = None;
    }
    net
}

/// Initialization and training seed of a surrogate. A method and its SC
/// counterpart share it, so with no SC datasets they train identically.
pub fn training_seed(cfg: &ExperimentConfig, variant_index: usize, method: Method) -> u64 {
    let base = Method::ALL
        .iter()
        .position(|m| *m == method.base())
        .expect("listed") as u64;
    rng::stream_seed(cfg.seed, &[stage::INIT, variant_index as u64, base])
}

fn sc_config(cfg: &ExperimentConfig) -> ScConfig {
    cfg.sc
        .as_ref()
        .map_or_else(ScConfig::default, |s| s.training())
}

pub fn train_one(
    cfg: &ExperimentConfig,
    variant_index: usize,
    candidate: &Candidate,
    method: Method,
    sc_data: &[Dataset],
    quiet: bool,
) -> Result<Trained> {
    let seed = training_seed(cfg, variant_index, method);
    let mut surrogate =
        Surrogate::for_model(&network_for(cfg, method), candidate.model.as_ref(), seed);
    let sc_sets: &[Dataset] = if method.self_consistent() {
        sc_data
    } else {
        &[]
    };
    let epochs = cfg.training.epochs;
    let mut progress = |e: &EpochLoss| {
        if !quiet {
            eprintln!(
                "[train {} {}] epoch {}/{epochs} base {:.4} sc {:.4} mmd {:.4} lambda {:.2}",
                candidate.name, method, e.epoch, e.base_loss, e.sc_loss, e.mmd_loss, e.lambda
            );
        }
    };
    let trace = train_with(
        &mut surrogate,
        candidate.model.as_ref(),
        &cfg.training,
        &sc_config(cfg),
        sc_sets,
        seed,
        &mut progress,
    )
    .map_err(|e| e.context(format!("{} {}", candidate.name, method)))?;
    Ok(Trained {
        variant: candidate.name.clone(),
        method,
        surrogate,
        trace,
    })
}

/// Every (variant, method) surrogate, in variant-major order. Training runs
/// sequentially; only evaluation fans out over `--jobs`.
pub fn train_all(
    cfg: &ExperimentConfig,
    data: &TestData,
    opts: &RunOptions,
) -> Result<Vec<Trained>> {
    let candidates = cfg.candidates()?;
    let mut out = Vec::new();
    for (vi, c) in candidates.iter().enumerate() {
        for m in &cfg.methods {
            out.push(train_one(cfg, vi, c, *m, &data.sc, opts.quiet)?);
        }
    }
    Ok(out)
}

pub fn save_trained(layout: &Layout, trained: &[Trained]) -> Result<()> {
    for t in trained {
        let stem = Layout::stem(&t.variant, t.method.name());
        io::save_checkpoint(
            &layout.checkpoints().join(format!("{stem}.json")),
            &t.surrogate,
        )?;
        io::write_loss_trace(&layout.losses().join(format!("{stem}.csv")), &t.trace)?;
    }
    Ok(())
}

pub fn load_trained(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<Trained>> {
    let mut out = Vec::new();
    for variant in cfg.variant_names() {
        for method in &cfg.methods {
            let stem = Layout::stem(&variant, method.name());
            let surrogate =
                io::load_checkpoint(&layout.checkpoints().join(format!("{stem}.json")))?;
            out.push(Trained {
                variant: variant.clone(),
                method: *method,
                surrogate,
                trace: LossTrace::default(),
            });
        }
    }
    Ok(out)
}

/// Surrogate evidence rows. The estimation stream depends only on the
/// (variant, dataset) pair, so all methods see the same base noise.
pub fn estimate_all(
    cfg: &ExperimentConfig,
    trained: &[Trained],
    data: &TestData,
    opts: &RunOptions,
) -> Result<Vec<EvidenceRow>> {
    let candidates = cfg.candidates()?;
    let pool = opts.pool()?;
    let mut rows = Vec::new();
    for t in trained {
        let vi = candidates
            .iter()
            .position(|c| c.name == t.variant)
            .ok_or_else(|| {
                Error::Config(format!("checkpoint for unknown variant {}", t.variant))
            })?;
        let model = candidates[vi].model.as_ref();
        let bound = t.surrogate.bind(model)?;
        let part: Vec<EvidenceRow> = pool.install(|| {
            data.test
                .par_iter()
                .enumerate()
                .map(|(di, d)| {
                    let mut r = rng::stream(cfg.seed, &[stage::ESTIMATE, vi as u64, di as u64]);
                    let est = if t.method.learns_likelihood() {
                        estimate_log_ml_nlpe(&bound, &bound, model, &d.data, cfg.test.draws, &mut r)
                    } else {
                        estimate_log_ml_npe(&bound, model, &d.data, cfg.test.draws, &mut r)
                    }
                    .map_err(|e| e.context(format!("{} {} on {}", t.variant, t.method, d.id)))?;
                    Ok(EvidenceRow::new(&d.id, &t.variant, t.method.name(), &est))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        rows.extend(part);
    }
    Ok(rows)
}

fn oracle_row(
    cfg: &ExperimentConfig,
    method: OracleMethod,
    (vi, candidate): (usize, &Candidate),
    (di, d): (usize, &LabeledDataset),
) -> Result<EvidenceRow> {
    let model: &dyn GenerativeModel = candidate.model.as_ref();
    let name = method.name();
    let path = |k: u64| rng::stream(cfg.seed, &[stage::ORACLE, vi as u64, di as u64, k]);
    let o = &cfg.oracles;
    let row = match method {
        OracleMethod::Analytic => {
            let v = model.analytic_log_evidence(&d.data).ok_or_else(|| {
                Error::Unsupported(format!("{} has no analytic evidence", candidate.name))
            })?;
            EvidenceRow::exact(&d.id, &candidate.name, name, v)
        }
        OracleMethod::Quadrature => {
            let g = cfg
                .gaussian_model()
                .ok_or_else(|| Error::Unsupported("quadrature needs the gaussian model".into()))?;
            EvidenceRow::exact(
                &d.id,
                &candidate.name,
                name,
                gaussian_quadrature_log_evidence(&g, &d.data, o.quadrature_nodes)?,
            )
        }
        OracleMethod::LaplaceIs => {
            let target = ModelTarget::new(model, &d.data)?;
            let init = vec![0.0; target.dim()];
            let est = laplace_is_log_evidence(
                &target,
                &init,
                &LaplaceConfig::new(o.laplace_draws),
                &mut path(0),
            )?;
            EvidenceRow::new(&d.id, &candidate.name, name, &est)
        }
        OracleMethod::Bridge => {
            let target = ModelTarget::new(model, &d.data)?;
            let start = find_map(&target, &vec![0.0; target.dim()], &MapConfig::default())?;
            let f = |x: &[f64]| target.log_joint(x);
            let chain = rwm_sample(&f, &start, &RwmConfig::new(o.rwm_steps), &mut path(1))?;
            let est = bridge_sampling_log_evidence(
                &target,
                &chain,
                &BridgeConfig::new(o.bridge_draws),
                &mut path(2),
            )?;
            EvidenceRow::new(&d.id, &candidate.name, name, &est)
        }
    };
    Ok(row)
}

/// Reference evidence rows for every requested oracle.
pub fn oracle_all(
    cfg: &ExperimentConfig,
    data: &TestData,
    opts: &RunOptions,
) -> Result<Vec<EvidenceRow>> {
    let candidates = cfg.candidates()?;
    let mut jobs = Vec::new();
    for (vi, c) in candidates.iter().enumerate() {
        for m in &cfg.oracles.methods {
            for (di, d) in data.test.iter().enumerate() {
                jobs.push((*m, (vi, c), (di, d)));
            }
        }
    }
    opts.pool()?.install(|| {
        jobs.par_iter()
            .map(|(m, c, d)| {
                oracle_row(cfg, *m, *c, *d).map_err(|e| {
                    e.context(format!(
                        "{} oracle for {} on {}",
                        m.name(),
                        c.1.name,
                        d.1.id
                    ))
                })
            })
            .collect()
    })
}

/// Aggregates, SC differences, scatter pairs and model probabilities.
/// The SC difference table is only written when methods come in pairs.
pub fn write_summaries(layout: &Layout, report: &ComparisonReport) -> Result<()> {
    if report.reference_method().is_some() {
        io::write_csv(&layout.aggregates(), &report.aggregates()?)?;
        io::write_csv(&layout.scatter(), &report.scatter()?)?;
        if let Ok(delta) = report.delta_rmse() {
            io::write_csv(&layout.delta(), &delta)?;
        }
    }
    let pmps = report.pmps()?;
    if !pmps.is_empty() {
        io::write_csv(&layout.pmp(), &pmps)?;
    }
    Ok(())
}

/// Runs every stage, writing artifacts as each one completes so a failure
/// leaves the earlier ones in place.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    opts: &RunOptions,
) -> std::result::Result<ComparisonReport, StageError> {
    let layout = Layout::new(out);
    cfg.validate().at("config")?;
    io::write_text(&layout.config_echo(), &cfg.to_json()).at("config")?;

    let data = simulate(cfg).at("simulate")?;
    write_datasets(&layout, cfg.experiment, &data).at("simulate")?;

    let trained = train_all(cfg, &data, opts).at("train")?;
    save_trained(&layout, &trained).at("train")?;

    let mut rows = estimate_all(cfg, &trained, &data, opts).at("estimate")?;
    io::write_csv(&layout.estimates(), &rows).at("estimate")?;

    let oracle = oracle_all(cfg, &data, opts).at("oracle")?;
    io::write_csv(&layout.oracle_rows(), &oracle).at("oracle")?;

    rows.extend(oracle);
    io::write_csv(&layout.report(), &rows).at("report")?;
    let report = ComparisonReport::new(rows);
    write_summaries(&layout, &report).at("report")?;
    Ok(report)
}
