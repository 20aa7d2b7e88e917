//! Std companion to `abmc-core`: experiment configuration, CSV and JSON
//! file formats, the comparison harness and the `abmc` command line.

pub mod config;
pub mod experiment;
pub mod io;
pub mod manifest;
pub mod report;

pub use config::{Experiment, ExperimentConfig, Method, OracleMethod};
pub use experiment::{run_experiment, RunOptions, StageError};
pub use report::{rmse, ComparisonReport, EvidenceRow};
