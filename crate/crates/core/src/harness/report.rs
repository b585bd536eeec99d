//! Comparison reports, finding metrics and trace files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::plan::{ExperimentPlan, BASELINE, PS_MERGE};
use crate::error::{Error, Result};
use crate::run::RunLog;
use crate::space::MixedSpace;
use crate::strategies::{STRUCTURED, UNSTRUCTURED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub strategy_id: String,
    /// Median over seeds of each run's best score.
    pub best_score: Option<f64>,
    /// Best score of the first seed's run.
    pub single_seed_score: Option<f64>,
    /// Evaluations per run; `None` renders as "N/A" (the unmerged baseline).
    pub evaluations: Option<u64>,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Deltas {
    /// Structured minus unstructured best score, in percentage points.
    pub structured_minus_unstructured: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FindingMetrics {
    pub mean_active: f64,
    pub reduction_pct: f64,
    pub min_active: usize,
    pub max_active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveTrace {
    /// Active layer count per evaluation of the first seed's run.
    pub per_iteration: Vec<usize>,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub plan_hash: String,
    pub budget: u64,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
    pub deltas: Deltas,
    /// Over the structured condition's logs, when there is one.
    pub reduction: Option<FindingMetrics>,
    pub active_trace: Option<ActiveTrace>,
}

/// Logs of one condition, one per seed in plan order.
#[derive(Debug, Clone)]
pub struct ConditionLogs {
    pub label: String,
    pub strategy_id: String,
    pub logs: Vec<RunLog>,
}

impl ConditionLogs {
    pub fn failed(&self) -> Option<&str> {
        self.logs.iter().find_map(|l| l.header.error.as_deref())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { (v[k - 1] + v[k]) / 2.0 })
}

/// Active-count statistics pooled over every record of `logs`.
pub fn finding_metrics(logs: &[RunLog]) -> Result<FindingMetrics> {
    let first = logs.iter().find(|l| !l.records.is_empty()).ok_or(Error::EmptyLogs)?;
    let summary = first.header.space;
    if logs.iter().any(|l| l.header.space != summary) {
        return Err(Error::Malformed("logs cover different spaces".into()));
    }
    let counts = logs.iter().flat_map(|l| l.records.iter().map(|r| r.active));
    let (mut sum, mut n, mut min, mut max) = (0usize, 0usize, usize::MAX, 0usize);
    for c in counts {
        sum += c;
        n += 1;
        min = min.min(c);
        max = max.max(c);
    }
    let mean_active = sum as f64 / n as f64;
    let space = MixedSpace::with_default_bounds(summary.n_models, summary.n_layers)?;
    Ok(FindingMetrics {
        mean_active,
        reduction_pct: space.effective_reduction(mean_active)?,
        min_active: min,
        max_active: max,
    })
}

/// Assembles the report from completed logs (single-threaded reduce).
pub fn build_report(plan: &ExperimentPlan, conditions: &[ConditionLogs]) -> Result<ComparisonReport> {
    let mut rows = Vec::with_capacity(conditions.len());
    for c in conditions {
        let failure = c.failed().map(str::to_owned);
        let scores: Vec<f64> = c.logs.iter().filter_map(|l| l.best_score()).collect();
        let best_score = if failure.is_some() || scores.len() != c.logs.len() {
            None
        } else {
            median(&scores)
        };
        let evaluations = match c.strategy_id.as_str() {
            BASELINE => None,
            PS_MERGE => Some(1),
            _ => Some(plan.budget),
        };
        rows.push(ReportRow {
            label: c.label.clone(),
            strategy_id: c.strategy_id.clone(),
            best_score,
            single_seed_score: c.logs.first().and_then(|l| l.best_score()),
            evaluations,
            failed: failure.is_some(),
            error: failure,
        });
    }

    let row_score = |id: &str| rows.iter().find(|r| r.strategy_id == id).and_then(|r| r.best_score);
    let deltas = Deltas {
        structured_minus_unstructured: match (row_score(STRUCTURED), row_score(UNSTRUCTURED)) {
            (Some(s), Some(u)) => Some(100.0 * (s - u)),
            _ => None,
        },
    };

    let structured = conditions
        .iter()
        .find(|c| c.strategy_id == STRUCTURED && c.failed().is_none());
    let (reduction, active_trace) = match structured {
        Some(c) => {
            let metrics = finding_metrics(&c.logs)?;
            let trace = ActiveTrace {
                per_iteration: c.logs[0].records.iter().map(|r| r.active).collect(),
                min: metrics.min_active,
                max: metrics.max_active,
            };
            (Some(metrics), Some(trace))
        }
        None => (None, None),
    };

    Ok(ComparisonReport {
        plan_hash: plan.hash(),
        budget: plan.budget,
        seeds: plan.seeds.clone(),
        rows,
        deltas,
        reduction,
        active_trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::TableText => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table-text" | "table" | "text" => Ok(ReportFormat::TableText),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::UnknownFormat(other.to_owned())),
        }
    }
}

pub const REPORT_COLUMNS: [&str; 3] = ["Method", "Best Accuracy", "Evaluations"];

fn evaluations_cell(row: &ReportRow) -> String {
    row.evaluations.map_or_else(|| "N/A".to_owned(), |n| n.to_string())
}

fn percent(score: Option<f64>, failed: bool) -> String {
    match score {
        Some(s) => format!("{:.1}%", 100.0 * s),
        None if failed => "failed".to_owned(),
        None => "n/a".to_owned(),
    }
}

fn signed_pp(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |d| format!("{d:+.1} pp"))
}

fn render_text(report: &ComparisonReport) -> String {
    let cells: Vec<[String; 3]> = report
        .rows
        .iter()
        .map(|r| [r.label.clone(), percent(r.best_score, r.failed), evaluations_cell(r)])
        .collect();
    let mut widths = REPORT_COLUMNS.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: [&str; 3]| {
        format!(
            "{:<w0$}, {:>w1$}, {:>w2$}\n",
            cols[0],
            cols[1],
            cols[2],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2]
        )
    };
    let mut out = line(REPORT_COLUMNS);
    for row in &cells {
        out.push_str(&line([&row[0], &row[1], &row[2]]));
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "Seeds: {} (best accuracy is the median over seeds)",
        report.seeds.len()
    );
    let _ = writeln!(
        out,
        "Structured minus unstructured: {}",
        signed_pp(report.deltas.structured_minus_unstructured)
    );
    match &report.reduction {
        Some(m) => {
            let _ = writeln!(out, "Mean active layers: {:.2}", m.mean_active);
            let _ = writeln!(out, "Effective search-space reduction: {:.1}%", m.reduction_pct);
            let _ = writeln!(out, "Active layer range: {}-{}", m.min_active, m.max_active);
        }
        None => {
            let _ = writeln!(out, "Mean active layers: n/a");
        }
    }
    for r in report.rows.iter().filter(|r| r.failed) {
        let _ = writeln!(out, "Failed: {}: {}", r.label, r.error.as_deref().unwrap_or("unknown error"));
    }
    out
}

fn render_csv(report: &ComparisonReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS)?;
    for r in &report.rows {
        let score = match r.best_score {
            Some(s) => s.to_string(),
            None if r.failed => "failed".to_owned(),
            None => "n/a".to_owned(),
        };
        w.write_record([r.label.as_str(), score.as_str(), evaluations_cell(r).as_str()])?;
    }
    let mut out = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |x| x.to_string());
    let mut appendix = csv::Writer::from_writer(Vec::new());
    appendix.write_record(["metric", "value"])?;
    appendix.write_record(["structured_minus_unstructured_pp", &opt(report.deltas.structured_minus_unstructured)])?;
    let m = report.reduction.as_ref();
    appendix.write_record(["mean_active", &opt(m.map(|m| m.mean_active))])?;
    appendix.write_record(["effective_reduction_pct", &opt(m.map(|m| m.reduction_pct))])?;
    appendix.write_record([
        "min_active",
        &m.map_or_else(|| "n/a".to_owned(), |m| m.min_active.to_string()),
    ])?;
    appendix.write_record([
        "max_active",
        &m.map_or_else(|| "n/a".to_owned(), |m| m.max_active.to_string()),
    ])?;
    out.push('\n');
    out.push_str(
        &String::from_utf8(appendix.into_inner().map_err(|e| Error::Io(e.into_error()))?)
            .expect("csv output is utf-8"),
    );
    Ok(out)
}

pub fn render_report(report: &ComparisonReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::TableText => render_text(report),
        ReportFormat::Csv => render_csv(report)?,
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
    })
}

pub fn parse_report_json(json: &str) -> Result<ComparisonReport> {
    Ok(serde_json::from_str(json)?)
}

/// Writes `report.txt`, `report.csv` and `report.json` into `dir`.
pub fn write_reports(report: &ComparisonReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for format in [ReportFormat::TableText, ReportFormat::Csv, ReportFormat::Json] {
        let path = dir.join(format!("report.{}", format.extension()));
        fs::write(&path, render_report(report, format)?)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Per-evaluation convergence rows: `(iteration, score, best_so_far_score)`.
pub fn convergence_trace(log: &RunLog) -> Vec<(u64, Option<f64>, Option<f64>)> {
    log.records
        .iter()
        .zip(log.best_score_trace())
        .map(|(r, best)| (r.eval_id, r.score, best))
        .collect()
}

/// Writes `<stem>.convergence.csv` and `<stem>.active.csv` for each log.
pub fn emit_traces(logs: &[(String, &RunLog)], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let mut paths = Vec::new();
    for (stem, log) in logs {
        let conv = dir.join(format!("{stem}.convergence.csv"));
        let mut w = csv::Writer::from_path(&conv)?;
        w.write_record(["iteration", "score", "best_so_far_score"])?;
        for (it, score, best) in convergence_trace(log) {
            w.write_record([it.to_string(), cell(score), cell(best)])?;
        }
        w.flush()?;

        let active = dir.join(format!("{stem}.active.csv"));
        let mut w = csv::Writer::from_path(&active)?;
        w.write_record(["iteration", "active_count"])?;
        for r in &log.records {
            w.write_record([r.eval_id.to_string(), r.active.to_string()])?;
        }
        w.flush()?;
        paths.push(conv);
        paths.push(active);
    }
    Ok(paths)
}

/// Summary of a convergence trace: how often best-so-far stays flat and how
/// often the per-evaluation score changes direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceShape {
    /// Fraction of steps where best-so-far did not improve.
    pub plateau_fraction: f64,
    /// Fraction of interior points where the per-evaluation score turns.
    pub turn_fraction: f64,
}

impl TraceShape {
    /// Best-so-far mostly flat while the raw score keeps swinging.
    pub fn is_unstable(&self) -> bool {
        self.plateau_fraction >= 0.5 && self.turn_fraction >= 0.3
    }
}

pub fn trace_shape(log: &RunLog) -> Option<TraceShape> {
    let scores: Option<Vec<f64>> = log.records.iter().map(|r| r.score).collect();
    let scores = scores?;
    if scores.len() < 3 {
        return None;
    }
    let best: Vec<f64> = log.best_score_trace().into_iter().collect::<Option<_>>()?;
    let flat = best.windows(2).filter(|w| w[1] <= w[0]).count();
    let turns = scores
        .windows(3)
        .filter(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0)
        .count();
    Some(TraceShape {
        plateau_fraction: flat as f64 / (best.len() - 1) as f64,
        turn_fraction: turns as f64 / (scores.len() - 2) as f64,
    })
}
