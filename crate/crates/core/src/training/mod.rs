//! Loss construction, the self-consistency warm-up schedule and the
//! training loops for posterior/likelihood surrogates and classifiers.

mod loss;
mod schedule;
mod train;

pub use loss::{
    batch_loss, bayes_identity_terms, classifier_sc_objective, classifier_sc_variance, nlpe_loss,
    npe_loss, sc_variance_term, sc_variance_value, BatchLoss, ClassifierObjective,
};
pub use schedule::WarmupSchedule;
pub use train::{
    analytic_marginals, simulation_table, table_fingerprint, train, train_classifier, train_with,
    EpochLoss, LossTrace, LrSchedule, ScConfig, SimulationMode, TrainingConfig,
};
