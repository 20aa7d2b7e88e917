//! Networks built on the gradient tape: dense stacks, conditional affine
//! coupling flows, summary networks and the surrogate bundles used for
//! posterior, likelihood and model-posterior estimation.

mod flow;
mod layers;
mod mmd;
mod summary;
mod surrogate;

pub use flow::{Condition, ConditionalFlow, FlowConfig};
pub use layers::{Activation, Mlp};
pub use mmd::{mmd_penalty, standard_normal_tensor};
pub use summary::{SummaryConfig, SummaryNet};
pub use surrogate::{
    BoundSurrogate, Classifier, ClassifierConfig, Encoded, LikelihoodNet, NetworkConfig,
    PosteriorNet, Surrogate, SurrogateCheckpoint, SurrogateShape,
};
