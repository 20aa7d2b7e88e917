//! Surrogate bundles: posterior flow `q_φ(θ | y)` with its summary network,
//! optional per-observation likelihood flow `q_ψ(y | θ)`, and the model
//! classifier `q(M | y)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::flow::{Condition, ConditionalFlow, FlowConfig};
use super::layers::{Activation, Mlp};
use super::summary::{SummaryConfig, SummaryNet};
use crate::error::{Error, Result};
use crate::evidence::{LikelihoodDensity, PosteriorDensity};
use crate::models::{Dataset, GenerativeModel};
use crate::rng::{self, stage};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub summary: SummaryConfig,
    pub posterior: FlowConfig,
    /// Present for joint likelihood–posterior estimation.
    #[serde(default)]
    pub likelihood: Option<FlowConfig>,
    #[serde(default)]
    pub l2: f64,
}

/// Dimensions a surrogate is built for, taken from a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogateShape {
    pub param_dim: usize,
    pub summary_input_dim: usize,
    pub extras_dim: usize,
    pub target_dim: usize,
    pub row_context_dim: usize,
}

impl SurrogateShape {
    pub fn of(model: &dyn GenerativeModel) -> Self {
        SurrogateShape {
            param_dim: model.param_dim(),
            summary_input_dim: model.summary_input_dim(),
            extras_dim: model.extras_dim(),
            target_dim: model.likelihood_target_dim(),
            row_context_dim: model.likelihood_row_context_dim(),
        }
    }
}

/// Encoded datasets: the flow condition (summary followed by extras) and
/// the bare summaries, both `[B, ·]`.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub condition: Var,
    pub summaries: Var,
}

fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    summary: &SummaryNet,
    extras_dim: usize,
    inputs: &[Tensor],
    extras: &[Vec<f64>],
) -> Result<Encoded> {
    if inputs.is_empty() || inputs.len() != extras.len() {
        return Err(Error::usage(format!(
            "{} inputs with {} extras",
            inputs.len(),
            extras.len()
        )));
    }
    let n = inputs[0].shape().first().copied().unwrap_or(0);
    let same = inputs.iter().all(|t| t.shape().first() == Some(&n));
    let summaries = if same {
        let width = summary.input_dim();
        let mut data = Vec::with_capacity(inputs.len() * n * width);
        for t in inputs {
            data.extend_from_slice(t.data());
        }
        let x = tape.constant(Tensor::new(alloc::vec![inputs.len() * n, width], data)?);
        summary.forward(tape, store, x, n)?
    } else {
        let parts = inputs
            .iter()
            .map(|t| {
                let x = tape.constant(t.clone());
                summary.forward(tape, store, x, t.shape()[0])
            })
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&parts, 0)?
    };
    if extras_dim == 0 {
        return Ok(Encoded {
            condition: summaries,
            summaries,
        });
    }
    let mut flat = Vec::with_capacity(extras.len() * extras_dim);
    for e in extras {
        if e.len() != extras_dim {
            return Err(Error::shape(
                "encode",
                format!("extras of length {} for width {extras_dim}", e.len()),
            ));
        }
        flat.extend_from_slice(e);
    }
    let ev = tape.constant(Tensor::new(alloc::vec![extras.len(), extras_dim], flat)?);
    let condition = tape.concat(&[summaries, ev], 1)?;
    Ok(Encoded {
        condition,
        summaries,
    })
}

/// `q_φ(θ | y)`: summary network feeding a conditional flow over θ.
#[derive(Clone, Debug)]
pub struct PosteriorNet {
    pub summary: SummaryNet,
    pub flow: ConditionalFlow,
    extras_dim: usize,
}

impl PosteriorNet {
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Tensor],
        extras: &[Vec<f64>],
    ) -> Result<Encoded> {
        encode(tape, store, &self.summary, self.extras_dim, inputs, extras)
    }

    pub fn encode_datasets(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        model: &dyn GenerativeModel,
        data: &[&Dataset],
    ) -> Result<Encoded> {
        let inputs: Vec<Tensor> = data.iter().map(|d| model.summary_input(d)).collect();
        let extras: Vec<Vec<f64>> = data.iter().map(|d| model.condition_extras(d)).collect();
        self.encode(tape, store, &inputs, &extras)
    }
}

/// `q_ψ(y | θ)` factorized over observations: each row is a flow draw
/// conditioned on θ and that row's context.
#[derive(Clone, Debug)]
pub struct LikelihoodNet {
    pub flow: ConditionalFlow,
    param_dim: usize,
    row_context_dim: usize,
}

impl LikelihoodNet {
    /// `Σ_i ln q_ψ(y_i | θ_b, ctx_i)` for each batch element; `theta` is
    /// `[B, p]` and `rows[b]` holds `(targets, row contexts)` of dataset `b`.
    pub fn log_lik(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        theta: Var,
        rows: &[(Tensor, Tensor)],
    ) -> Result<Var> {
        let ts = tape.shape(theta).to_vec();
        if ts.len() != 2 || ts[1] != self.param_dim || ts[0] != rows.len() || rows.is_empty() {
            return Err(Error::shape(
                "likelihood",
                format!("θ {ts:?} for {} datasets", rows.len()),
            ));
        }
        let n = rows[0].0.shape()[0];
        if rows.iter().all(|r| r.0.shape()[0] == n) {
            self.log_lik_block(tape, store, theta, rows, n)
        } else {
            let parts = (0..rows.len())
                .map(|b| {
                    let tb = tape.slice(theta, 0, b, 1)?;
                    let nb = rows[b].0.shape()[0];
                    self.log_lik_block(tape, store, tb, &rows[b..b + 1], nb)
                })
                .collect::<Result<Vec<_>>>()?;
            tape.concat(&parts, 0)
        }
    }

    fn log_lik_block(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        theta: Var,
        rows: &[(Tensor, Tensor)],
        n: usize,
    ) -> Result<Var> {
        let b = rows.len();
        let dim = self.flow.dim();
        let mut targets = Vec::with_capacity(b * n * dim);
        for (t, _) in rows {
            targets.extend_from_slice(t.data());
        }
        let y = tape.constant(Tensor::new(alloc::vec![b * n, dim], targets)?);
        let lp = if self.row_context_dim == 0 {
            self.flow
                .log_prob(tape, store, y, Condition::repeated(theta, n))?
        } else {
            let mut ctx = Vec::with_capacity(b * n * self.row_context_dim);
            for (_, c) in rows {
                ctx.extend_from_slice(c.data());
            }
            let cv = tape.constant(Tensor::new(alloc::vec![b * n, self.row_context_dim], ctx)?);
            let rep = tape.repeat_rows(theta, n)?;
            let cond = tape.concat(&[rep, cv], 1)?;
            self.flow.log_prob(tape, store, y, Condition::rows(cond))?
        };
        let grouped = tape.reshape(lp, &[b, n])?;
        tape.sum_axis(grouped, 1)
    }
}

/// Serializable snapshot of a surrogate: architecture plus every parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateCheckpoint {
    pub config: NetworkConfig,
    pub shape: SurrogateShape,
    pub init_seed: u64,
    pub optimizer_steps: u64,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Clone, Debug)]
pub struct Surrogate {
    pub config: NetworkConfig,
    pub shape: SurrogateShape,
    pub store: ParamStore,
    pub posterior: PosteriorNet,
    pub likelihood: Option<LikelihoodNet>,
    init_seed: u64,
}

impl Surrogate {
    pub fn new(config: &NetworkConfig, shape: SurrogateShape, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[stage::INIT]);
        let mut store = ParamStore::new(config.l2);
        let summary = SummaryNet::new(
            &mut store,
            "summary",
            shape.summary_input_dim,
            &config.summary,
            &mut rng,
        );
        let cond_dim = summary.output_dim() + shape.extras_dim;
        let flow = ConditionalFlow::new(
            &mut store,
            "posterior",
            shape.param_dim,
            cond_dim,
            &config.posterior,
            &mut rng,
        );
        let likelihood = config.likelihood.as_ref().map(|fc| LikelihoodNet {
            flow: ConditionalFlow::new(
                &mut store,
                "likelihood",
                shape.target_dim,
                shape.param_dim + shape.row_context_dim,
                fc,
                &mut rng,
            ),
            param_dim: shape.param_dim,
            row_context_dim: shape.row_context_dim,
        });
        Surrogate {
            config: config.clone(),
            shape,
            store,
            posterior: PosteriorNet {
                summary,
                flow,
                extras_dim: shape.extras_dim,
            },
            likelihood,
            init_seed: seed,
        }
    }

    pub fn for_model(config: &NetworkConfig, model: &dyn GenerativeModel, seed: u64) -> Self {
        Self::new(config, SurrogateShape::of(model), seed)
    }

    pub fn has_likelihood(&self) -> bool {
        self.likelihood.is_some()
    }

    fn check_model(&self, model: &dyn GenerativeModel) -> Result<()> {
        let shape = SurrogateShape::of(model);
        if shape != self.shape {
            return Err(Error::shape(
                "surrogate",
                format!(
                    "built for {:?}, model {} has {shape:?}",
                    self.shape,
                    model.name()
                ),
            ));
        }
        Ok(())
    }

    /// Binds the surrogate to the model that supplies its input features.
    pub fn bind<'a>(&'a self, model: &'a dyn GenerativeModel) -> Result<BoundSurrogate<'a>> {
        self.check_model(model)?;
        Ok(BoundSurrogate {
            surrogate: self,
            model,
        })
    }

    pub fn checkpoint(&self) -> SurrogateCheckpoint {
        SurrogateCheckpoint {
            config: self.config.clone(),
            shape: self.shape,
            init_seed: self.init_seed,
            optimizer_steps: self.store.steps_taken(),
            tensors: self
                .store
                .named_values()
                .map(|(n, t)| (String::from(n), t.clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &SurrogateCheckpoint) -> Result<Self> {
        let mut s = Surrogate::new(&ck.config, ck.shape, ck.init_seed);
        s.store
            .load_values(ck.tensors.iter().map(|(n, t)| (n.as_str(), t.clone())))?;
        Ok(s)
    }
}

/// A surrogate together with the model providing summary inputs, extras and
/// likelihood rows.
#[derive(Clone, Copy)]
pub struct BoundSurrogate<'a> {
    pub surrogate: &'a Surrogate,
    pub model: &'a dyn GenerativeModel,
}

impl BoundSurrogate<'_> {
    /// Posterior draws `[count, p]` for one dataset from given base noise,
    /// with their log densities.
    fn draws_from_noise(&self, data: &Dataset, noise: Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.surrogate;
        let count = noise.shape()[0];
        let mut tape = Tape::new();
        let enc = s
            .posterior
            .encode_datasets(&mut tape, &s.store, self.model, &[data])?;
        let z = tape.constant(noise);
        let (x, lp) = s.posterior.flow.sample(
            &mut tape,
            &s.store,
            z,
            Condition::repeated(enc.condition, count),
        )?;
        Ok((tape.data(x).to_vec(), tape.data(lp).to_vec()))
    }

    /// `ln q_φ(θ_j | y)` for several parameter vectors.
    pub fn posterior_log_probs(&self, thetas: &[Vec<f64>], data: &Dataset) -> Result<Vec<f64>> {
        let s = self.surrogate;
        let p = s.shape.param_dim;
        let mut flat = Vec::with_capacity(thetas.len() * p);
        for t in thetas {
            if t.len() != p {
                return Err(Error::shape(
                    "posterior",
                    format!("θ of length {} for dimension {p}", t.len()),
                ));
            }
            flat.extend_from_slice(t);
        }
        let mut tape = Tape::new();
        let enc = s
            .posterior
            .encode_datasets(&mut tape, &s.store, self.model, &[data])?;
        let x = tape.constant(Tensor::new(alloc::vec![thetas.len(), p], flat)?);
        let lp = s.posterior.flow.log_prob(
            &mut tape,
            &s.store,
            x,
            Condition::repeated(enc.condition, thetas.len()),
        )?;
        Ok(tape.data(lp).to_vec())
    }

    /// Learned summary of a dataset.
    pub fn summary(&self, data: &Dataset) -> Result<Vec<f64>> {
        let s = self.surrogate;
        s.posterior
            .summary
            .summarize(&s.store, &self.model.summary_input(data))
    }
}

impl PosteriorDensity for BoundSurrogate<'_> {
    fn dim(&self) -> usize {
        self.surrogate.shape.param_dim
    }

    fn sample_with_log_prob(
        &self,
        data: &Dataset,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<(Vec<f64>, f64)>> {
        if count == 0 {
            return Err(Error::usage("posterior sampling needs at least one draw"));
        }
        let p = self.dim();
        let noise: Vec<f64> = (0..count * p)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (x, lp) = self.draws_from_noise(data, Tensor::new(alloc::vec![count, p], noise)?)?;
        Ok(x.chunks(p).map(<[f64]>::to_vec).zip(lp).collect())
    }

    fn log_prob(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        Ok(self.posterior_log_probs(&[theta.to_vec()], data)?[0])
    }
}

impl LikelihoodDensity for BoundSurrogate<'_> {
    fn log_likelihood_batch(&self, data: &Dataset, thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
        let s = self.surrogate;
        let net = s
            .likelihood
            .as_ref()
            .ok_or_else(|| Error::Unsupported("surrogate has no likelihood network".into()))?;
        if thetas.is_empty() {
            return Ok(Vec::new());
        }
        let p = s.shape.param_dim;
        let mut flat = Vec::with_capacity(thetas.len() * p);
        for t in thetas {
            flat.extend_from_slice(t);
        }
        let rows = self.model.likelihood_rows(data);
        let batch: Vec<(Tensor, Tensor)> = (0..thetas.len()).map(|_| rows.clone()).collect();
        let mut tape = Tape::new();
        let th = tape.constant(Tensor::new(alloc::vec![thetas.len(), p], flat)?);
        let ll = net.log_lik(&mut tape, &s.store, th, &batch)?;
        Ok(tape.data(ll).to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub summary: SummaryConfig,
    pub hidden: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub l2: f64,
}

fn default_activation() -> Activation {
    Activation::Silu
}

/// `q(M_k | y)` over `K` candidate models. The output layer starts at zero,
/// so an untrained classifier is uniform.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub store: ParamStore,
    summary: SummaryNet,
    head: Mlp,
    extras_dim: usize,
    models: usize,
}

impl Classifier {
    pub fn new(
        config: &ClassifierConfig,
        models: usize,
        summary_input_dim: usize,
        extras_dim: usize,
        seed: u64,
    ) -> Self {
        let mut rng = rng::stream(seed, &[stage::INIT]);
        let mut store = ParamStore::new(config.l2);
        let summary = SummaryNet::new(
            &mut store,
            "summary",
            summary_input_dim,
            &config.summary,
            &mut rng,
        );
        let head = Mlp::new(
            &mut store,
            "head",
            &[
                summary.output_dim() + extras_dim,
                config.hidden,
                config.hidden,
                models,
            ],
            config.activation,
            false,
            0.0,
            &mut rng,
        );
        Classifier {
            config: config.clone(),
            store,
            summary,
            head,
            extras_dim,
            models,
        }
    }

    pub fn models(&self) -> usize {
        self.models
    }

    /// Log model probabilities `[B, K]`.
    pub fn log_probs(
        &self,
        tape: &mut Tape,
        inputs: &[Tensor],
        extras: &[Vec<f64>],
    ) -> Result<Var> {
        let enc = encode(
            tape,
            &self.store,
            &self.summary,
            self.extras_dim,
            inputs,
            extras,
        )?;
        let logits = self.head.forward(tape, &self.store, enc.condition)?;
        tape.log_softmax(logits)
    }

    /// Model probabilities for one dataset; `features` supplies the inputs.
    pub fn pmps(&self, features: &dyn GenerativeModel, data: &Dataset) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let lp = self.log_probs(
            &mut tape,
            &[features.summary_input(data)],
            &[features.condition_extras(data)],
        )?;
        Ok(tape.data(lp).iter().map(|v| v.exp()).collect())
    }
}
