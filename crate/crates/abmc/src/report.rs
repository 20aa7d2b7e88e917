//! Evidence report rows and their aggregates: RMSE against a reference
//! oracle, the SC-minus-plain differences, scatter pairs and model
//! probabilities.

use std::collections::{BTreeMap, BTreeSet};

use abmc_core::evidence::{pmps_from_evidences, uniform_prior, EvidenceEstimate};
use abmc_core::{math, Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::Method;

/// One evidence estimate for one (dataset, model, method).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRow {
    pub dataset_id: String,
    pub model: String,
    pub method: String,
    pub log_ml: f64,
    pub mc_se: f64,
    #[serde(rename = "S")]
    pub draws: usize,
    pub skipped_draws: usize,
}

impl EvidenceRow {
    pub fn new(dataset_id: &str, model: &str, method: &str, e: &EvidenceEstimate) -> Self {
        EvidenceRow {
            dataset_id: dataset_id.into(),
            model: model.into(),
            method: method.into(),
            log_ml: e.log_ml,
            mc_se: e.mc_std_error,
            draws: e.draws,
            skipped_draws: e.skipped,
        }
    }

    pub fn exact(dataset_id: &str, model: &str, method: &str, log_ml: f64) -> Self {
        EvidenceRow {
            dataset_id: dataset_id.into(),
            model: model.into(),
            method: method.into(),
            log_ml,
            mc_se: 0.0,
            draws: 0,
            skipped_draws: 0,
        }
    }
}

/// Test-set group of a dataset id such as `mu5-007` or `sim-M0-012`.
pub fn group_of(dataset_id: &str) -> &str {
    dataset_id.rsplit_once('-').map_or(dataset_id, |(g, _)| g)
}

/// `sqrt(mean((estimate − truth)²))`.
pub fn rmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(Error::Usage(format!(
            "rmse of {} estimates against {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let mse = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t).powi(2))
        .sum::<f64>()
        / estimates.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub method: String,
    pub reference: String,
    pub n: usize,
    pub rmse: f64,
    /// Mean absolute deviation from the reference.
    pub mad: f64,
    pub pearson: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub group: String,
    pub mode: String,
    pub rmse_sc: f64,
    pub rmse_plain: f64,
    pub delta_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub dataset_id: String,
    pub model: String,
    pub method: String,
    pub oracle: f64,
    pub surrogate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmpRow {
    pub dataset_id: String,
    pub method: String,
    pub model: String,
    pub pmp: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<EvidenceRow>,
}

/// Scatter rows keyed by (group, method).
type Cells = BTreeMap<(String, String), Vec<ScatterRow>>;

impl ComparisonReport {
    pub fn new(rows: Vec<EvidenceRow>) -> Self {
        ComparisonReport { rows }
    }

    fn methods(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.method.as_str()).collect()
    }

    /// The analytic evidence when present, otherwise bridge sampling.
    pub fn reference_method(&self) -> Option<&'static str> {
        let methods = self.methods();
        ["analytic", "bridge"]
            .into_iter()
            .find(|m| methods.contains(m))
    }

    fn lookup(&self, method: &str) -> BTreeMap<(&str, &str), f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| ((r.dataset_id.as_str(), r.model.as_str()), r.log_ml))
            .collect()
    }

    /// Surrogate rows paired with the reference, grouped by (group, method).
    fn paired(&self) -> Result<(&'static str, Cells)> {
        let reference = self
            .reference_method()
            .ok_or_else(|| Error::Usage("report has no analytic or bridge rows".into()))?;
        let truth = self.lookup(reference);
        let mut out = Cells::new();
        for r in self
            .rows
            .iter()
            .filter(|r| Method::parse(&r.method).is_some())
        {
            let t = truth
                .get(&(r.dataset_id.as_str(), r.model.as_str()))
                .ok_or_else(|| {
                    Error::Usage(format!(
                        "no {reference} row for dataset {} under model {}",
                        r.dataset_id, r.model
                    ))
                })?;
            out.entry((group_of(&r.dataset_id).to_string(), r.method.clone()))
                .or_default()
                .push(ScatterRow {
                    dataset_id: r.dataset_id.clone(),
                    model: r.model.clone(),
                    method: r.method.clone(),
                    oracle: *t,
                    surrogate: r.log_ml,
                });
        }
        Ok((reference, out))
    }

    pub fn scatter(&self) -> Result<Vec<ScatterRow>> {
        Ok(self.paired()?.1.into_values().flatten().collect())
    }

    pub fn aggregates(&self) -> Result<Vec<AggregateRow>> {
        let (reference, paired) = self.paired()?;
        paired
            .into_iter()
            .map(|((group, method), pairs)| {
                let x: Vec<f64> = pairs.iter().map(|p| p.oracle).collect();
                let y: Vec<f64> = pairs.iter().map(|p| p.surrogate).collect();
                Ok(AggregateRow {
                    n: pairs.len(),
                    rmse: rmse(&y, &x)?,
                    mad: x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64,
                    pearson: math::pearson(&x, &y),
                    reference: reference.into(),
                    group,
                    method,
                })
            })
            .collect()
    }

    /// `RMSE_SC − RMSE_plain` per (group, mode). Every group must carry both
    /// members of each mode it mentions.
    pub fn delta_rmse(&self) -> Result<Vec<DeltaRow>> {
        let agg = self.aggregates()?;
        let table: BTreeMap<(&str, &str), f64> = agg
            .iter()
            .map(|a| ((a.group.as_str(), a.method.as_str()), a.rmse))
            .collect();
        let groups: BTreeSet<&str> = agg.iter().map(|a| a.group.as_str()).collect();
        let mut out = Vec::new();
        for group in groups {
            for mode in [Method::Npe, Method::Nlpe] {
                let plain = table.get(&(group, mode.name()));
                let sc = table.get(&(group, mode.with_sc().name()));
                match (plain, sc) {
                    (Some(p), Some(s)) => out.push(DeltaRow {
                        group: group.into(),
                        mode: mode.name().into(),
                        rmse_sc: *s,
                        rmse_plain: *p,
                        delta_rmse: s - p,
                    }),
                    (None, None) => {}
                    (Some(_), None) | (None, Some(_)) => {
                        return Err(Error::Usage(format!(
                            "missing pairing: group {group} has only one of {} and {}",
                            mode.name(),
                            mode.with_sc().name()
                        )))
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Usage(
                "missing pairing: no method appears both with and without SC".into(),
            ));
        }
        Ok(out)
    }

    /// Posterior model probabilities under a uniform model prior, per
    /// (dataset, method), over every model with a row for that pair.
    pub fn pmps(&self) -> Result<Vec<PmpRow>> {
        let mut by: BTreeMap<(&str, &str), Vec<(&str, f64)>> = BTreeMap::new();
        for r in &self.rows {
            by.entry((r.dataset_id.as_str(), r.method.as_str()))
                .or_default()
                .push((r.model.as_str(), r.log_ml));
        }
        let mut out = Vec::new();
        for ((dataset, method), models) in by {
            if models.len() < 2 {
                continue;
            }
            let ev: Vec<f64> = models.iter().map(|m| m.1).collect();
            let p = pmps_from_evidences(&ev, &uniform_prior(ev.len()))?;
            for ((model, _), pmp) in models.iter().zip(p) {
                out.push(PmpRow {
                    dataset_id: dataset.into(),
                    method: method.into(),
                    model: (*model).into(),
                    pmp,
                });
            }
        }
        Ok(out)
    }
}
