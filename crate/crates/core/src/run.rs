//! Ask/evaluate/tell loop and its per-evaluation log.
//!
//! A log is a header (written as a sidecar JSON file) plus one JSON-lines
//! record per evaluation.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_ordered, ExecMode};
use crate::objectives::{Concurrency, ObjectiveHandle};
use crate::space::{Candidate, EvalResult};
use crate::strategies::{build_strategy, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceSummary {
    pub n_models: usize,
    pub n_layers: usize,
    pub m: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub strategy: String,
    pub seed: u64,
    pub budget: u64,
    pub space: SpaceSummary,
    pub objective_id: String,
    pub fixture_hash: Option<String>,
    /// Set when the run stopped early on an evaluator failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iter: u64,
    pub eval_id: u64,
    pub objective: f64,
    pub score: Option<f64>,
    pub active: usize,
    pub best_objective: f64,
    pub candidate_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<RunRecord>,
}

/// A run that stopped on an error; `log` holds everything evaluated before it.
#[derive(Debug)]
pub struct RunFailure {
    pub log: RunLog,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run failed after {} evaluations: {}",
            self.log.records.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl RunLog {
    pub fn new(header: RunHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    pub fn header_for(strategy: &str, objective: &ObjectiveHandle, budget: u64, seed: u64) -> RunHeader {
        let space = objective.space();
        RunHeader {
            strategy: strategy.to_owned(),
            seed,
            budget,
            space: SpaceSummary {
                n_models: space.n_models(),
                n_layers: space.n_layers(),
                m: space.m(),
                n: space.n(),
            },
            objective_id: objective.id().to_owned(),
            fixture_hash: objective.fixture_hash(),
            error: None,
        }
    }

    /// Appends one record, maintaining best-so-far. `iter` is the
    /// strategy's iteration for this candidate.
    pub fn push(&mut self, iter: u64, candidate_digest: String, active: usize, result: &EvalResult) {
        let best = self
            .records
            .last()
            .map_or(result.objective, |r| r.best_objective.min(result.objective));
        self.records.push(RunRecord {
            iter,
            eval_id: self.records.len() as u64,
            objective: result.objective,
            score: result.score,
            active,
            best_objective: best,
            candidate_digest,
        });
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_objective)
    }

    /// Score of the record holding the best objective (earliest on ties).
    pub fn best_score(&self) -> Option<f64> {
        self.best_record().and_then(|r| r.score)
    }

    pub fn best_record(&self) -> Option<&RunRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&RunRecord>, r| match best {
                Some(b) if b.objective <= r.objective => Some(b),
                _ => Some(r),
            })
    }

    /// Score of the best-so-far candidate after each evaluation.
    pub fn best_score_trace(&self) -> Vec<Option<f64>> {
        let mut best: Option<&RunRecord> = None;
        self.records
            .iter()
            .map(|r| {
                if best.is_none_or(|b| r.objective < b.objective) {
                    best = Some(r);
                }
                best.and_then(|b| b.score)
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialization is infallible"));
            out.push('\n');
        }
        out
    }

    pub fn header_json(&self) -> String {
        serde_json::to_string_pretty(&self.header).expect("header serialization is infallible")
    }

    /// Writes `<stem>.header.json` and `<stem>.jsonl` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let header = dir.join(format!("{stem}.header.json"));
        let lines = dir.join(format!("{stem}.jsonl"));
        fs::write(&header, self.header_json())?;
        let mut f = fs::File::create(&lines)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok((header, lines))
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let header: RunHeader =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.header.json")))?)?;
        let f = fs::File::open(dir.join(format!("{stem}.jsonl")))?;
        let mut records = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { header, records })
    }
}

/// Evaluates a population, concurrently when both the mode and the objective
/// allow it. Results are in population order.
pub fn evaluate_population(
    objective: &ObjectiveHandle,
    population: &[Candidate],
    mode: ExecMode,
) -> Vec<Result<EvalResult>> {
    let mode = match objective.concurrency() {
        Concurrency::Serial => ExecMode::Sequential,
        Concurrency::Concurrent => mode,
    };
    map_ordered(mode, population, |c| objective.evaluate(c))
}

/// Runs `strategy` against `objective` until `budget` evaluations are spent.
pub fn run_strategy(
    strategy: &mut dyn Strategy,
    objective: &ObjectiveHandle,
    budget: u64,
    mode: ExecMode,
) -> Result<RunLog, RunFailure> {
    let seed = strategy.state().rng_seed;
    let mut log = RunLog::new(RunLog::header_for(strategy.id(), objective, budget, seed));
    let fail = |mut log: RunLog, error: Error| {
        log.header.error = Some(error.to_string());
        RunFailure { log, error }
    };
    if budget == 0 {
        return Err(fail(log, Error::Config("budget must be at least 1".into())));
    }
    if strategy.space() != objective.space() {
        return Err(fail(
            log,
            Error::Config("strategy and objective spaces differ".into()),
        ));
    }

    while (log.records.len() as u64) < budget {
        let mut population = match strategy.ask() {
            Ok(p) => p,
            Err(e) => return Err(fail(log, e)),
        };
        let full = population.len();
        let remaining = (budget - log.records.len() as u64) as usize;
        population.truncate(remaining);

        let results = evaluate_population(objective, &population, mode);
        let mut evaluated = Vec::with_capacity(population.len());
        for (c, r) in population.into_iter().zip(results) {
            match r {
                Ok(r) => {
                    log.push(c.origin.iteration, c.digest(), c.active_count(), &r);
                    evaluated.push((c, r));
                }
                Err(e) => {
                    strategy.observe(&evaluated);
                    return Err(fail(log, e));
                }
            }
        }
        if evaluated.len() == full {
            if let Err(e) = strategy.tell(&evaluated) {
                return Err(fail(log, e));
            }
        } else {
            strategy.observe(&evaluated);
        }
    }
    Ok(log)
}

/// Builds strategy `strategy_id` with `seed` and runs it.
pub fn run(
    strategy_id: &str,
    objective: &ObjectiveHandle,
    budget: u64,
    seed: u64,
    mode: ExecMode,
) -> Result<RunLog, RunFailure> {
    let mut strategy = build_strategy(strategy_id, *objective.space(), seed).map_err(|error| {
        let mut log = RunLog::new(RunLog::header_for(strategy_id, objective, budget, seed));
        log.header.error = Some(error.to_string());
        RunFailure { log, error }
    })?;
    run_strategy(strategy.as_mut(), objective, budget, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_teacher_instance, MaskedSphere};
    use crate::space::MixedSpace;
    use crate::strategies::STRATEGY_IDS;

    fn toy() -> ObjectiveHandle {
        ObjectiveHandle::new(make_teacher_instance(3, 4, 3, 8).unwrap())
    }

    #[test]
    fn budget_ten_gives_ten_records() {
        for id in STRATEGY_IDS {
            let log = run(id, &toy(), 10, 1, ExecMode::default()).unwrap();
            assert_eq!(log.records.len(), 10, "{id}");
            let ids: Vec<u64> = log.records.iter().map(|r| r.eval_id).collect();
            assert_eq!(ids, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn best_so_far_is_non_increasing() {
        for id in STRATEGY_IDS {
            let log = run(id, &toy(), 60, 2, ExecMode::default()).unwrap();
            assert!(log.records.windows(2).all(|w| w[1].best_objective <= w[0].best_objective));
            for r in &log.records {
                assert!(r.best_objective <= r.objective);
            }
        }
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        for id in STRATEGY_IDS {
            let a = run(id, &toy(), 45, 7, ExecMode::default()).unwrap();
            let b = run(id, &toy(), 45, 7, ExecMode::Sequential).unwrap();
            assert_eq!(a.to_jsonl(), b.to_jsonl(), "{id}");
        }
    }

    #[test]
    fn counter_matches_records() {
        let h = toy();
        let log = run("conditional-cma", &h, 33, 0, ExecMode::default()).unwrap();
        assert_eq!(h.evaluations(), 33);
        assert_eq!(log.records.len(), 33);
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(run("structured", &toy(), 0, 0, ExecMode::default()).is_err());
    }

    #[test]
    fn unknown_strategy() {
        let err = run("nope", &toy(), 5, 0, ExecMode::default()).unwrap_err();
        assert!(matches!(err.error, Error::UnknownId { .. }));
    }

    #[test]
    fn jsonl_keys_and_round_trip() {
        let space = MixedSpace::with_default_bounds(2, 3).unwrap();
        let h = ObjectiveHandle::new(MaskedSphere::generate(space, 0, 0.1));
        let log = run("structured", &h, 5, 3, ExecMode::default()).unwrap();
        let first = log.to_jsonl().lines().next().unwrap().to_owned();
        let v: serde_json::Value = serde_json::from_str(&first).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for k in ["iter", "eval_id", "objective", "score", "active", "best_objective", "candidate_digest"] {
            assert!(keys.contains(&k), "{k}");
        }
        let dir = tempfile::tempdir().unwrap();
        log.write(dir.path(), "run").unwrap();
        assert_eq!(RunLog::read(dir.path(), "run").unwrap(), log);
    }
}
