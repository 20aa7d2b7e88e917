//! File formats: datasets and reports as CSV, checkpoints as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use abmc_core::nn::{Surrogate, SurrogateCheckpoint};
use abmc_core::training::LossTrace;
use abmc_core::{Dataset, Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Experiment;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Column names of a dataset file.
pub fn column_names(experiment: Experiment, cols: usize) -> Vec<String> {
    match experiment {
        Experiment::Diffusion if cols == 2 => vec!["signed_rt".into(), "condition".into()],
        Experiment::Ar if cols == 4 => ["t", "y", "u", "w"].map(String::from).to_vec(),
        _ => (1..=cols).map(|j| format!("y{j}")).collect(),
    }
}

/// One dataset per file; the context, if any, is repeated on every row as
/// `context_*` columns.
pub fn write_dataset(path: &Path, experiment: Experiment, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = column_names(experiment, data.cols);
    header.extend((1..=data.context.len()).map(|j| format!("context_{j}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for i in 0..data.rows {
        let rec: Vec<String> = data
            .row(i)
            .iter()
            .chain(&data.context)
            .map(|v| v.to_string())
            .collect();
        w.write_record(&rec).map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    write_text(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    let is_context: Vec<bool> = header.iter().map(|h| h.starts_with("context_")).collect();
    let cols = is_context.iter().filter(|c| !**c).count();
    let (mut data, mut context, mut rows) = (Vec::new(), Vec::new(), 0);
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        for (field, ctx) in rec.iter().zip(&is_context) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| io_err(path, format!("{field:?}: {e}")))?;
            if !*ctx {
                data.push(v);
            } else if rows == 0 {
                context.push(v);
            }
        }
        rows += 1;
    }
    Ok(Dataset::new(rows, cols, data)?.with_context(context))
}

/// An entry of the dataset index written next to the dataset files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub dataset_id: String,
    /// `test` or `sc`.
    pub role: String,
    pub file: String,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    write_text(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| io_err(path, e)))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| io_err(path, e))?;
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| io_err(path, e))
}

pub fn save_checkpoint(path: &Path, surrogate: &Surrogate) -> Result<()> {
    write_json(path, &surrogate.checkpoint())
}

pub fn load_checkpoint(path: &Path) -> Result<Surrogate> {
    let ck: SurrogateCheckpoint = read_json(path)?;
    Surrogate::from_checkpoint(&ck)
}

pub fn write_loss_trace(path: &Path, trace: &LossTrace) -> Result<()> {
    write_csv(path, &trace.epochs)
}

/// Standard artifact locations under an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn datasets(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn dataset_index(&self) -> PathBuf {
        self.datasets().join("index.csv")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn losses(&self) -> PathBuf {
        self.root.join("losses")
    }

    pub fn config_echo(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn estimates(&self) -> PathBuf {
        self.root.join("estimates.csv")
    }

    pub fn oracle_rows(&self) -> PathBuf {
        self.root.join("oracles.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn aggregates(&self) -> PathBuf {
        self.root.join("aggregates.csv")
    }

    pub fn delta(&self) -> PathBuf {
        self.root.join("delta_rmse.csv")
    }

    pub fn scatter(&self) -> PathBuf {
        self.root.join("scatter.csv")
    }

    pub fn pmp(&self) -> PathBuf {
        self.root.join("pmp.csv")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("manifest-{command}.json"))
    }

    /// File stem for a trained surrogate, e.g. `M1_npe-sc`.
    pub fn stem(variant: &str, method: &str) -> String {
        format!("{variant}_{}", method.replace('+', "-"))
    }
}
