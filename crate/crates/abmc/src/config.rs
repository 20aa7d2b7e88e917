//! Experiment configuration, read from JSON with unknown keys rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use abmc_core::models::{
    ArModel, ArVariant, GaussianLocationModel, PriorScale, RaceVariant, RacingDiffusionModel,
};
use abmc_core::nn::NetworkConfig;
use abmc_core::training::{ScConfig, TrainingConfig, WarmupSchedule};
use abmc_core::{Error, GenerativeModel, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Gaussian,
    Diffusion,
    Ar,
}

/// A surrogate variant: posterior-only or joint, with or without the
/// self-consistency penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "npe")]
    Npe,
    #[serde(rename = "npe+sc")]
    NpeSc,
    #[serde(rename = "nlpe")]
    Nlpe,
    #[serde(rename = "nlpe+sc")]
    NlpeSc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Npe, Method::NpeSc, Method::Nlpe, Method::NlpeSc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Npe => "npe",
            Method::NpeSc => "npe+sc",
            Method::Nlpe => "nlpe",
            Method::NlpeSc => "nlpe+sc",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn self_consistent(self) -> bool {
        matches!(self, Method::NpeSc | Method::NlpeSc)
    }

    pub fn learns_likelihood(self) -> bool {
        matches!(self, Method::Nlpe | Method::NlpeSc)
    }

    /// The same surrogate without the penalty.
    pub fn base(self) -> Method {
        match self {
            Method::Npe | Method::NpeSc => Method::Npe,
            Method::Nlpe | Method::NlpeSc => Method::Nlpe,
        }
    }

    pub fn with_sc(self) -> Method {
        match self {
            Method::Npe | Method::NpeSc => Method::NpeSc,
            Method::Nlpe | Method::NlpeSc => Method::NlpeSc,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Analytic,
    Quadrature,
    LaplaceIs,
    Bridge,
}

impl OracleMethod {
    pub fn name(self) -> &'static str {
        match self {
            OracleMethod::Analytic => "analytic",
            OracleMethod::Quadrature => "quadrature",
            OracleMethod::LaplaceIs => "laplace_is",
            OracleMethod::Bridge => "bridge",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSection {
    pub dim: usize,
    pub n_obs: usize,
    pub prior: PriorScale,
}

impl Default for GaussianSection {
    fn default() -> Self {
        GaussianSection {
            dim: 1,
            n_obs: 10,
            prior: PriorScale::Fixed { variance: 1.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    pub trials_per_condition: usize,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            trials_per_condition: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfConsistency {
    pub schedule: WarmupSchedule,
    /// Posterior draws per dataset inside the penalty.
    #[serde(default = "default_sc_draws")]
    pub draws: usize,
    #[serde(default = "default_max_datasets")]
    pub max_datasets_per_step: usize,
    /// Number of unlabeled SC datasets `M`.
    pub datasets: usize,
    /// Mean shift of the Gaussian SC datasets.
    #[serde(default)]
    pub shift: f64,
    /// Use the first `datasets` out-of-distribution test sets as SC data
    /// instead of fresh draws from the contaminating process.
    #[serde(default)]
    pub from_test_sets: bool,
}

fn default_sc_draws() -> usize {
    16
}

fn default_max_datasets() -> usize {
    32
}

impl SelfConsistency {
    pub fn training(&self) -> ScConfig {
        ScConfig {
            schedule: self.schedule,
            draws: self.draws,
            max_datasets_per_step: self.max_datasets_per_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    /// Datasets per shift (Gaussian) or per generating variant.
    pub count: usize,
    /// Gaussian test means.
    #[serde(default)]
    pub shifts: Vec<f64>,
    /// Variants that generate in-distribution test sets (diffusion, AR).
    #[serde(default)]
    pub generators: Vec<String>,
    /// Out-of-distribution test sets (diffusion, AR).
    #[serde(default)]
    pub ood_count: usize,
    /// Posterior draws per evidence estimate.
    #[serde(default = "default_draws")]
    pub draws: usize,
}

fn default_draws() -> usize {
    128
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub methods: Vec<OracleMethod>,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
    #[serde(default = "default_laplace_draws")]
    pub laplace_draws: usize,
    /// Random-walk sweeps for the chain feeding bridge sampling.
    #[serde(default = "default_rwm_steps")]
    pub rwm_steps: usize,
    #[serde(default = "default_bridge_draws")]
    pub bridge_draws: usize,
}

fn default_nodes() -> usize {
    512
}

fn default_laplace_draws() -> usize {
    20_000
}

fn default_rwm_steps() -> usize {
    20_000
}

fn default_bridge_draws() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Candidate model variants; defaults to every variant of the family.
    #[serde(default)]
    pub variants: Vec<String>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub gaussian: Option<GaussianSection>,
    #[serde(default)]
    pub diffusion: Option<DiffusionSection>,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub sc: Option<SelfConsistency>,
    pub test: TestSpec,
    pub oracles: OracleSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

/// A named candidate model.
pub struct Candidate {
    pub name: String,
    pub model: Box<dyn GenerativeModel>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical JSON used for the config echo and its hash.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn variant_names(&self) -> Vec<String> {
        if !self.variants.is_empty() {
            return self.variants.clone();
        }
        match self.experiment {
            Experiment::Gaussian => vec!["gaussian".into()],
            Experiment::Diffusion => vec!["M0".into(), "M1".into()],
            Experiment::Ar => ArVariant::ALL.iter().map(|v| format!("{v:?}")).collect(),
        }
    }

    /// Looks a variant name up in the model registry of this experiment.
    pub fn model(&self, name: &str) -> Result<Box<dyn GenerativeModel>> {
        let unknown = || {
            Error::Config(format!(
                "unknown {:?} model variant {name:?}",
                self.experiment
            ))
        };
        Ok(match self.experiment {
            Experiment::Gaussian => {
                if name != "gaussian" {
                    return Err(unknown());
                }
                let g = self.gaussian.clone().unwrap_or_default();
                Box::new(GaussianLocationModel::new(g.dim, g.n_obs, g.prior))
            }
            Experiment::Diffusion => {
                let variant = match name {
                    "M0" => RaceVariant::M0,
                    "M1" => RaceVariant::M1,
                    _ => return Err(unknown()),
                };
                let trials = self
                    .diffusion
                    .clone()
                    .unwrap_or_default()
                    .trials_per_condition;
                Box::new(RacingDiffusionModel::new(variant, trials))
            }
            Experiment::Ar => {
                let variant = ArVariant::ALL
                    .into_iter()
                    .find(|v| format!("{v:?}") == name)
                    .ok_or_else(unknown)?;
                Box::new(ArModel::new(variant))
            }
        })
    }

    pub fn candidates(&self) -> Result<Vec<Candidate>> {
        self.variant_names()
            .into_iter()
            .map(|name| {
                Ok(Candidate {
                    model: self.model(&name)?,
                    name,
                })
            })
            .collect()
    }

    pub fn gaussian_model(&self) -> Option<GaussianLocationModel> {
        let g = self.gaussian.clone().unwrap_or_default();
        (self.experiment == Experiment::Gaussian)
            .then(|| GaussianLocationModel::new(g.dim, g.n_obs, g.prior))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no surrogate methods requested".into()));
        }
        let names = self.variant_names();
        for name in names.iter().chain(&self.test.generators) {
            self.model(name)?;
        }
        if self.experiment != Experiment::Gaussian && self.gaussian.is_some() {
            return Err(Error::Config(
                "a gaussian section only applies to the gaussian experiment".into(),
            ));
        }
        if self.experiment != Experiment::Diffusion && self.diffusion.is_some() {
            return Err(Error::Config(
                "a diffusion section only applies to the diffusion experiment".into(),
            ));
        }
        if self.experiment == Experiment::Gaussian && self.test.shifts.is_empty() {
            return Err(Error::Config(
                "the gaussian experiment needs at least one test shift".into(),
            ));
        }
        if self.experiment != Experiment::Gaussian
            && self.test.generators.is_empty()
            && self.test.ood_count == 0
        {
            return Err(Error::Config(
                "no test sets: set test.generators or test.ood_count".into(),
            ));
        }
        if self.test.draws == 0 {
            return Err(Error::Config("test.draws must be positive".into()));
        }
        if self.methods.iter().any(|m| m.learns_likelihood()) && self.network.likelihood.is_none() {
            return Err(Error::Config("nlpe methods need network.likelihood".into()));
        }
        if self.methods.iter().any(|m| m.self_consistent()) && self.sc.is_none() {
            return Err(Error::Config(
                "self-consistent methods need an sc section".into(),
            ));
        }
        if let Some(sc) = &self.sc {
            sc.training().validate()?;
            if sc.from_test_sets && sc.datasets > self.test.ood_count {
                return Err(Error::Config(format!(
                    "{} SC datasets requested from {} out-of-distribution test sets",
                    sc.datasets, self.test.ood_count
                )));
            }
        }
        if (self.oracles.methods.contains(&OracleMethod::Analytic)
            || self.oracles.methods.contains(&OracleMethod::Quadrature))
            && self.experiment != Experiment::Gaussian
        {
            return Err(Error::Config(
                "analytic and quadrature oracles need the gaussian experiment".into(),
            ));
        }
        self.training.validate()
    }
}
