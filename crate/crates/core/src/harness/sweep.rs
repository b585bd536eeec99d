//! Structured vs unstructured sampling across an objective suite.

use serde::{Deserialize, Serialize};

use super::plan::ObjectiveConfig;
use super::report::median;
use crate::error::{Error, Result};
use crate::exec::{map_ordered, ExecMode};
use crate::run::run;
use crate::strategies::{STRUCTURED, UNSTRUCTURED};

/// Layers per model of the default suite (two models, so m = 8, 32, 192).
pub const SUITE_LAYERS: [usize; 3] = [4, 16, 96];
/// Evaluation budget per run, as a multiple of m.
pub const BUDGET_PER_COORDINATE: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub objective_id: String,
    pub m: usize,
    pub budget: u64,
    pub seeds: usize,
    pub unstructured_median: f64,
    pub structured_median: f64,
}

impl SweepRow {
    pub fn margin(&self) -> f64 {
        self.structured_median - self.unstructured_median
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    /// Mean over suite members of the structured-minus-unstructured margin.
    pub fn aggregate_margin(&self) -> f64 {
        self.rows.iter().map(SweepRow::margin).sum::<f64>() / self.rows.len() as f64
    }

    /// Structured never worse on any member and better on the aggregate.
    pub fn structured_dominates(&self) -> bool {
        self.rows.iter().all(|r| r.margin() >= 0.0) && self.aggregate_margin() > 0.0
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
            .expect("csv output is utf-8"))
    }
}

/// Median best score of both samplers on one suite member, with paired seeds.
pub fn sweep_member(config: &ObjectiveConfig, seeds: &[u64], budget: u64, mode: ExecMode) -> Result<SweepRow> {
    config.validate()?;
    let jobs: Vec<(&str, u64)> = [UNSTRUCTURED, STRUCTURED]
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let scores = map_ordered(mode, &jobs, |&(strategy, seed)| -> Result<f64> {
        let built = config.build(seed)?;
        let log = run(strategy, &built.handle, budget, seed, ExecMode::Sequential).map_err(|f| f.error)?;
        log.best_score()
            .ok_or_else(|| Error::Malformed(format!("objective `{}` reports no score", config.id)))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let (u, s) = scores.split_at(seeds.len());
    Ok(SweepRow {
        objective_id: config.id.clone(),
        m: config.n_models * config.n_layers,
        budget,
        seeds: seeds.len(),
        unstructured_median: median(u).ok_or_else(|| Error::Config("sweep needs at least one seed".into()))?,
        structured_median: median(s).ok_or_else(|| Error::Config("sweep needs at least one seed".into()))?,
    })
}

/// Every objective in `objective_ids` at every layer count, two models,
/// budget `10 m`.
pub fn suite_sweep(objective_ids: &[&str], layers: &[usize], seeds: &[u64], mode: ExecMode) -> Result<SweepSummary> {
    let mut rows = Vec::new();
    for id in objective_ids {
        for &l in layers {
            let config = ObjectiveConfig::new(id, 2, l);
            let budget = BUDGET_PER_COORDINATE * (2 * l) as u64;
            rows.push(sweep_member(&config, seeds, budget, mode)?);
        }
    }
    Ok(SweepSummary { rows })
}
