use std::path::PathBuf;
use std::process::ExitCode;

use abmc::experiment::{self, RunOptions, StageError};
use abmc::io::{self, Layout};
use abmc::manifest::ManifestTimer;
use abmc::{ComparisonReport, EvidenceRow, ExperimentConfig};
use abmc_core::Error;
use clap::{Args, Parser, Subcommand};

/// Amortized Bayesian model comparison: train surrogates, estimate log
/// marginal likelihoods and compare them with reference oracles.
#[derive(Parser)]
#[command(name = "abmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate test and SC datasets.
    Simulate(Common),
    /// Train every (variant, method) surrogate.
    Train(Common),
    /// Surrogate evidence estimates from saved checkpoints.
    Estimate(Common),
    /// Reference evidences from the configured oracles.
    Oracle(Common),
    /// Aggregate evidence rows into RMSE, SC difference, scatter and PMP tables.
    Report(Common),
    /// All of the above in one run.
    Experiment(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Train(_) => "train",
            Command::Estimate(_) => "estimate",
            Command::Oracle(_) => "oracle",
            Command::Report(_) => "report",
            Command::Experiment(_) => "experiment",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c)
            | Command::Train(c)
            | Command::Estimate(c)
            | Command::Oracle(c)
            | Command::Report(c)
            | Command::Experiment(c) => c,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON). Optional for `report`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// No progress output.
    #[arg(long)]
    quiet: bool,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::Usage("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: Option<&ExperimentConfig>) -> Result<PathBuf, Error> {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.clone()))
        .ok_or_else(|| {
            Error::Usage("no output directory: pass --out or set output in the config".into())
        })
}

/// Datasets already written under `layout`, or freshly simulated ones.
fn datasets(cfg: &ExperimentConfig, layout: &Layout) -> Result<experiment::TestData, Error> {
    if layout.dataset_index().exists() {
        experiment::read_datasets(layout)
    } else {
        let data = experiment::simulate(cfg)?;
        experiment::write_datasets(layout, cfg.experiment, &data)?;
        Ok(data)
    }
}

fn report_rows(layout: &Layout) -> Result<Vec<EvidenceRow>, Error> {
    if layout.report().exists() {
        return io::read_csv(&layout.report());
    }
    let mut rows = Vec::new();
    for path in [layout.estimates(), layout.oracle_rows()] {
        if path.exists() {
            rows.extend(io::read_csv::<EvidenceRow>(&path)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::Usage(format!(
            "no evidence rows under {}",
            layout.root.display()
        )));
    }
    Ok(rows)
}

fn report(layout: &Layout) -> Result<(), Error> {
    let report = ComparisonReport::new(report_rows(layout)?);
    // Strict here: the harness skips the difference table, the command insists on it.
    let delta = report.delta_rmse()?;
    io::write_csv(&layout.report(), &report.rows)?;
    experiment::write_summaries(layout, &report)?;
    io::write_csv(&layout.delta(), &delta)
}

fn run(command: &Command) -> Result<(), StageError> {
    let common = command.common();
    let stage = |source| StageError {
        stage: "config",
        source,
    };
    let cfg = match command {
        Command::Report(_) if common.config.is_none() => None,
        _ => Some(load(common).map_err(stage)?),
    };
    let root = out_dir(common, cfg.as_ref()).map_err(stage)?;
    let layout = Layout::new(&root);
    let opts = RunOptions {
        jobs: common.jobs,
        quiet: common.quiet,
    };
    let (canonical, seed) = cfg
        .as_ref()
        .map_or((String::new(), 0), |c| (c.to_json(), c.seed));
    let timer = ManifestTimer::start(command.name(), &canonical, seed, opts.jobs);

    let at = |stage: &'static str| move |source| StageError { stage, source };
    let result = match (command, &cfg) {
        (Command::Report(_), _) => report(&layout).map_err(at("report")),
        (Command::Experiment(_), Some(cfg)) => {
            experiment::run_experiment(cfg, &root, &opts).map(|_| ())
        }
        (Command::Simulate(_), Some(cfg)) => experiment::simulate(cfg)
            .and_then(|d| experiment::write_datasets(&layout, cfg.experiment, &d))
            .map_err(at("simulate")),
        (Command::Train(_), Some(cfg)) => datasets(cfg, &layout)
            .and_then(|d| experiment::train_all(cfg, &d, &opts))
            .and_then(|t| experiment::save_trained(&layout, &t))
            .map_err(at("train")),
        (Command::Estimate(_), Some(cfg)) => (|| {
            let data = experiment::read_datasets(&layout)?;
            let trained = experiment::load_trained(cfg, &layout)?;
            let rows = experiment::estimate_all(cfg, &trained, &data, &opts)?;
            io::write_csv(&layout.estimates(), &rows)
        })()
        .map_err(at("estimate")),
        (Command::Oracle(_), Some(cfg)) => datasets(cfg, &layout)
            .and_then(|d| experiment::oracle_all(cfg, &d, &opts))
            .and_then(|rows| io::write_csv(&layout.oracle_rows(), &rows))
            .map_err(at("oracle")),
        (_, None) => unreachable!("only report runs without a config"),
    };
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("failed: {e}"),
    };
    if let Some(cfg) = &cfg {
        io::write_text(&layout.config_echo(), &cfg.to_json()).map_err(stage)?;
    }
    timer
        .finish(&layout.manifest(command.name()), &status)
        .map_err(stage)?;
    result
}

fn exit_code(e: &StageError) -> u8 {
    match e.source {
        Error::Usage(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("abmc {}: {e}", cli.command.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
