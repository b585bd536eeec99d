//! Runs every (condition, seed) pair of a plan and writes logs, reports and
//! traces into one experiment directory.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::plan::{log_stem, BuiltObjective, Condition, ExperimentPlan, BASELINE, PS_MERGE};
use super::report::{build_report, emit_traces, write_reports, ComparisonReport, ConditionLogs};
use crate::error::{Error, Result};
use crate::exec::{map_ordered, ExecMode};
use crate::objectives::ps_merge::PS_ALPHA;
use crate::objectives::toy_merge::baseline_candidate;
use crate::run::{run, RunFailure, RunLog};

pub const PLAN_FILE: &str = "plan.json";
pub const TRACE_DIR: &str = "traces";

#[derive(Debug)]
pub struct Comparison {
    pub dir: PathBuf,
    pub report: ComparisonReport,
    pub conditions: Vec<ConditionLogs>,
}

fn failed_log(condition: &Condition, plan: &ExperimentPlan, seed: u64, error: &Error) -> RunLog {
    let obj = plan.objective(&condition.objective_id).ok();
    let (n_models, n_layers) = obj.map_or((0, 0), |o| (o.n_models, o.n_layers));
    let mut log = RunLog::new(crate::run::RunHeader {
        strategy: condition.strategy_id.clone(),
        seed,
        budget: plan.budget,
        space: crate::run::SpaceSummary {
            n_models,
            n_layers,
            m: n_models * n_layers,
            n: n_models * n_layers,
        },
        objective_id: condition.objective_id.clone(),
        fixture_hash: None,
        error: None,
    });
    log.header.error = Some(error.to_string());
    log
}

/// "Model A alone": one evaluation of the baseline candidate.
fn run_baseline(built: &BuiltObjective, budget: u64, seed: u64) -> Result<RunLog, RunFailure> {
    let handle = &built.handle;
    let mut log = RunLog::new(RunLog::header_for(BASELINE, handle, budget, seed));
    let c = baseline_candidate(handle.space());
    match handle.evaluate(&c) {
        Ok(r) => {
            log.push(0, c.digest(), c.active_count(), &r);
            Ok(log)
        }
        Err(error) => {
            log.header.error = Some(error.to_string());
            Err(RunFailure { log, error })
        }
    }
}

/// Parameter-space interpolation at `PS_ALPHA`: exactly one evaluation.
fn run_ps_merge(built: &BuiltObjective, budget: u64, seed: u64) -> Result<RunLog, RunFailure> {
    let handle = &built.handle;
    let mut log = RunLog::new(RunLog::header_for(PS_MERGE, handle, budget, seed));
    let outcome = built
        .toy
        .as_ref()
        .ok_or_else(|| Error::Config("ps-merge needs the toy-merge objective".into()))
        .and_then(|toy| {
            let ps = toy.ps_merge()?;
            let r = ps.ps_merge_eval(PS_ALPHA)?;
            Ok((ps.merged(PS_ALPHA), r))
        });
    match outcome {
        Ok((theta, r)) => {
            let mut h = Sha256::new();
            for v in &theta {
                h.update(v.to_le_bytes());
            }
            let digest = hex::encode(h.finalize())[..16].to_owned();
            // Every layer of the interpolated stack is used.
            log.push(0, digest, handle.space().n_layers(), &r);
            Ok(log)
        }
        Err(error) => {
            log.header.error = Some(error.to_string());
            Err(RunFailure { log, error })
        }
    }
}

/// One (condition, seed) run. Build failures come back as a failed log.
pub fn run_condition(plan: &ExperimentPlan, condition: &Condition, seed: u64, mode: ExecMode) -> RunLog {
    let built = match plan.objective(&condition.objective_id).and_then(|o| o.build(seed)) {
        Ok(b) => b,
        Err(e) => return failed_log(condition, plan, seed, &e),
    };
    let outcome = match condition.strategy_id.as_str() {
        BASELINE => run_baseline(&built, plan.budget, seed),
        PS_MERGE => run_ps_merge(&built, plan.budget, seed),
        id => run(id, &built.handle, plan.budget, seed, mode),
    };
    outcome.unwrap_or_else(|f| f.log)
}

/// Runs all logs of `plan` without touching the file system. Condition
/// order does not affect any log.
pub fn run_all(plan: &ExperimentPlan, mode: ExecMode) -> Result<Vec<ConditionLogs>> {
    plan.validate()?;
    let jobs: Vec<(usize, u64)> = (0..plan.conditions.len())
        .flat_map(|c| plan.seeds.iter().map(move |&s| (c, s)))
        .collect();
    // Jobs run in parallel; each run's own populations go sequentially so
    // the pool is not oversubscribed.
    let inner = ExecMode::Sequential;
    let logs = map_ordered(mode, &jobs, |&(c, seed)| run_condition(plan, &plan.conditions[c], seed, inner));
    let mut logs = logs.into_iter();
    Ok(plan
        .conditions
        .iter()
        .map(|c| ConditionLogs {
            label: c.label.clone(),
            strategy_id: c.strategy_id.clone(),
            logs: logs.by_ref().take(plan.seeds.len()).collect(),
        })
        .collect())
}

/// Runs the plan and writes `exp-<hash>/` under the plan's output directory:
/// `plan.json`, one header + JSON-lines log per run, `report.{txt,csv,json}`
/// and convergence/active-count traces.
pub fn run_comparison(plan: &ExperimentPlan, mode: ExecMode) -> Result<Comparison> {
    let conditions = run_all(plan, mode)?;
    let dir = plan.experiment_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(PLAN_FILE), serde_json::to_string_pretty(plan)?)?;
    let mut traces = Vec::new();
    for (c, logs) in plan.conditions.iter().zip(&conditions) {
        for (seed, log) in plan.seeds.iter().zip(&logs.logs) {
            let stem = log_stem(c, *seed);
            log.write(&dir, &stem)?;
            if !log.records.is_empty() {
                traces.push((stem, log));
            }
        }
    }
    emit_traces(&traces, &dir.join(TRACE_DIR))?;
    let report = build_report(plan, &conditions)?;
    write_reports(&report, &dir)?;
    Ok(Comparison { dir, report, conditions })
}

/// Reads a finished experiment directory back and rebuilds its report.
pub fn load_comparison(dir: &Path) -> Result<(ExperimentPlan, ComparisonReport, Vec<ConditionLogs>)> {
    let plan: ExperimentPlan = serde_json::from_str(&fs::read_to_string(dir.join(PLAN_FILE))?)?;
    plan.validate()?;
    let mut conditions = Vec::with_capacity(plan.conditions.len());
    for c in &plan.conditions {
        let logs = plan
            .seeds
            .iter()
            .map(|&s| RunLog::read(dir, &log_stem(c, s)))
            .collect::<Result<Vec<_>>>()?;
        conditions.push(ConditionLogs {
            label: c.label.clone(),
            strategy_id: c.strategy_id.clone(),
            logs,
        });
    }
    let report = build_report(&plan, &conditions)?;
    Ok((plan, report, conditions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::plan::{ObjectiveConfig, TOY_MERGE};

    #[test]
    fn four_conditions_have_expected_counts() {
        let dir = tempfile::tempdir().unwrap();
        let plan = ExperimentPlan::four_conditions(
            ObjectiveConfig::new(TOY_MERGE, 2, 4),
            10,
            vec![0, 1],
            dir.path().to_owned(),
        );
        let cmp = run_comparison(&plan, ExecMode::default()).unwrap();
        let evals: Vec<Option<u64>> = cmp.report.rows.iter().map(|r| r.evaluations).collect();
        assert_eq!(evals, [None, Some(1), Some(10), Some(10)]);
        let records: Vec<usize> = cmp.conditions.iter().map(|c| c.logs[0].records.len()).collect();
        assert_eq!(records, [1, 1, 10, 10]);
        assert!(cmp.dir.join("report.txt").exists());
        assert!(cmp.dir.join("model-a-no-merging__seed1.jsonl").exists());

        let (_, reloaded, _) = load_comparison(&cmp.dir).unwrap();
        assert_eq!(reloaded, cmp.report);
    }

    #[test]
    fn single_evaluation_row() {
        let dir = tempfile::tempdir().unwrap();
        let plan = ExperimentPlan {
            conditions: vec![Condition::new("only", "structured", TOY_MERGE)],
            objectives: vec![ObjectiveConfig::new(TOY_MERGE, 2, 3)],
            budget: 1,
            seeds: vec![4],
            output_dir: dir.path().to_owned(),
        };
        let cmp = run_comparison(&plan, ExecMode::default()).unwrap();
        let log = &cmp.conditions[0].logs[0];
        assert_eq!(log.records.len(), 1);
        assert_eq!(cmp.report.rows[0].best_score, log.records[0].score);
    }
}
