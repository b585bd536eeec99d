//! Experiment plans: which conditions run, on which objective, with which
//! seeds.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixture::hash_json;
use crate::objectives::masked_sphere::DEFAULT_SUBSET_PENALTY;
use crate::objectives::{ExternalObjective, MaskedSphere, ObjectiveHandle, ToyMergeObjective};
use crate::space::MixedSpace;
use crate::strategies::STRATEGY_IDS;

pub const TOY_MERGE: &str = "toy-merge";
pub const MASKED_SPHERE: &str = "masked-sphere";
pub const SPHERE: &str = "sphere";
pub const OBJECTIVE_IDS: [&str; 3] = [TOY_MERGE, MASKED_SPHERE, SPHERE];

/// Evaluates "model A alone" once.
pub const BASELINE: &str = "baseline";
/// Evaluates the parameter-space interpolation of both models once.
pub const PS_MERGE: &str = "ps-merge";

/// Row labels of the four-condition comparison.
pub const BASELINE_LABEL: &str = "Model A (no merging)";
pub const PS_MERGE_LABEL: &str = "PS Merging";
pub const UNSTRUCTURED_LABEL: &str = "Unstructured DFS";
pub const STRUCTURED_LABEL: &str = "Structured DFS";

pub fn is_known_strategy(id: &str) -> bool {
    id == BASELINE || id == PS_MERGE || STRATEGY_IDS.contains(&id)
}

fn default_dim() -> usize {
    4
}

fn default_dataset_size() -> usize {
    16
}

fn default_penalty() -> f64 {
    DEFAULT_SUBSET_PENALTY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub id: String,
    pub n_models: usize,
    pub n_layers: usize,
    /// Toy-merge hidden width.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Toy-merge number of input points.
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    /// Masked-sphere Hamming penalty.
    #[serde(default = "default_penalty")]
    pub subset_penalty: f64,
    /// When set, evaluations go to this child process instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluator_cmd: Option<Vec<String>>,
}

/// An objective instance for one seed.
pub struct BuiltObjective {
    pub handle: ObjectiveHandle,
    /// Present for in-process toy-merge instances (needed by the baseline
    /// and parameter-space rows).
    pub toy: Option<Arc<ToyMergeObjective>>,
}

impl ObjectiveConfig {
    pub fn new(id: &str, n_models: usize, n_layers: usize) -> Self {
        Self {
            id: id.to_owned(),
            n_models,
            n_layers,
            dim: default_dim(),
            dataset_size: default_dataset_size(),
            subset_penalty: default_penalty(),
            evaluator_cmd: None,
        }
    }

    pub fn with_evaluator(mut self, argv: Vec<String>) -> Self {
        self.evaluator_cmd = Some(argv);
        self
    }

    pub fn space(&self) -> Result<MixedSpace> {
        MixedSpace::with_default_bounds(self.n_models, self.n_layers)
    }

    pub fn validate(&self) -> Result<()> {
        self.space()?;
        if self.evaluator_cmd.is_none() && !OBJECTIVE_IDS.contains(&self.id.as_str()) {
            return Err(Error::UnknownId {
                kind: "objective",
                id: self.id.clone(),
            });
        }
        if let Some(argv) = &self.evaluator_cmd {
            if argv.is_empty() {
                return Err(Error::Config("empty evaluator command".into()));
            }
        }
        if self.id == TOY_MERGE && (self.dim == 0 || self.dataset_size == 0) {
            return Err(Error::Config("toy-merge needs dim >= 1 and dataset_size >= 1".into()));
        }
        Ok(())
    }

    /// Instance for `seed`. External evaluators get a fresh process.
    pub fn build(&self, seed: u64) -> Result<BuiltObjective> {
        self.validate()?;
        let space = self.space()?;
        if let Some(argv) = &self.evaluator_cmd {
            let ext = ExternalObjective::spawn(argv, space, &self.id)?;
            return Ok(BuiltObjective {
                handle: ObjectiveHandle::new(ext),
                toy: None,
            });
        }
        Ok(match self.id.as_str() {
            TOY_MERGE => {
                let toy = Arc::new(ToyMergeObjective::generate(
                    seed,
                    self.n_models,
                    self.n_layers,
                    self.dim,
                    self.dataset_size,
                )?);
                BuiltObjective {
                    handle: ObjectiveHandle::from_arc(toy.clone()),
                    toy: Some(toy),
                }
            }
            MASKED_SPHERE => BuiltObjective {
                handle: ObjectiveHandle::new(MaskedSphere::generate(space, seed, self.subset_penalty)),
                toy: None,
            },
            SPHERE => BuiltObjective {
                handle: ObjectiveHandle::new(MaskedSphere::sphere(space, seed)),
                toy: None,
            },
            other => {
                return Err(Error::UnknownId {
                    kind: "objective",
                    id: other.to_owned(),
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    pub strategy_id: String,
    pub objective_id: String,
}

impl Condition {
    pub fn new(label: &str, strategy_id: &str, objective_id: &str) -> Self {
        Self {
            label: label.to_owned(),
            strategy_id: strategy_id.to_owned(),
            objective_id: objective_id.to_owned(),
        }
    }

    /// File-name-safe form of the label.
    pub fn slug(&self) -> String {
        let mut out = String::new();
        for ch in self.label.chars() {
            if ch.is_ascii_alphanumeric() {
                out.push(ch.to_ascii_lowercase());
            } else if !out.ends_with('-') {
                out.push('-');
            }
        }
        out.trim_matches('-').to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub conditions: Vec<Condition>,
    pub objectives: Vec<ObjectiveConfig>,
    pub budget: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ExperimentPlan {
    /// Baseline, parameter-space merge, unstructured and structured search on
    /// one objective.
    pub fn four_conditions(objective: ObjectiveConfig, budget: u64, seeds: Vec<u64>, output_dir: PathBuf) -> Self {
        let id = objective.id.clone();
        Self {
            conditions: vec![
                Condition::new(BASELINE_LABEL, BASELINE, &id),
                Condition::new(PS_MERGE_LABEL, PS_MERGE, &id),
                Condition::new(UNSTRUCTURED_LABEL, crate::strategies::UNSTRUCTURED, &id),
                Condition::new(STRUCTURED_LABEL, crate::strategies::STRUCTURED, &id),
            ],
            objectives: vec![objective],
            budget,
            seeds,
            output_dir,
        }
    }

    pub fn objective(&self, id: &str) -> Result<&ObjectiveConfig> {
        self.objectives.iter().find(|o| o.id == id).ok_or_else(|| Error::UnknownId {
            kind: "objective",
            id: id.to_owned(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::Config("plan needs at least one condition".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("plan needs at least one seed".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        let mut labels = BTreeSet::new();
        let mut slugs = BTreeSet::new();
        for c in &self.conditions {
            if !labels.insert(c.label.as_str()) {
                return Err(Error::Config(format!("duplicate condition label `{}`", c.label)));
            }
            if c.slug().is_empty() || !slugs.insert(c.slug()) {
                return Err(Error::Config(format!("label `{}` does not give a unique file name", c.label)));
            }
            if !is_known_strategy(&c.strategy_id) {
                return Err(Error::UnknownId {
                    kind: "strategy",
                    id: c.strategy_id.clone(),
                });
            }
            let obj = self.objective(&c.objective_id)?;
            obj.validate()?;
            if c.strategy_id == PS_MERGE
                && (obj.id != TOY_MERGE || obj.evaluator_cmd.is_some() || obj.n_models != 2)
            {
                return Err(Error::Config(
                    "ps-merge needs the in-process toy-merge objective with 2 models".into(),
                ));
            }
        }
        let mut ids = BTreeSet::new();
        for o in &self.objectives {
            if !ids.insert(o.id.as_str()) {
                return Err(Error::Config(format!("duplicate objective id `{}`", o.id)));
            }
        }
        Ok(())
    }

    /// Hash of everything that determines results (the output location is
    /// excluded).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("plan serialization is infallible");
        v.as_object_mut().expect("plan is an object").remove("output_dir");
        hash_json(&v.to_string())[..12].to_owned()
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(format!("exp-{}", self.hash()))
    }
}

/// Log file stem of one (condition, seed) run.
pub fn log_stem(condition: &Condition, seed: u64) -> String {
    format!("{}__seed{seed}", condition.slug())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> ExperimentPlan {
        ExperimentPlan::four_conditions(ObjectiveConfig::new(TOY_MERGE, 2, 4), 10, vec![0], "out".into())
    }

    #[test]
    fn four_condition_plan_is_valid() {
        plan().validate().unwrap();
    }

    #[test]
    fn slugs() {
        let slugs: Vec<String> = plan().conditions.iter().map(|c| c.slug()).collect();
        assert_eq!(slugs, ["model-a-no-merging", "ps-merging", "unstructured-dfs", "structured-dfs"]);
    }

    #[test]
    fn rejects_bad_plans() {
        let mut p = plan();
        p.seeds.clear();
        assert!(matches!(p.validate(), Err(Error::Config(_))));

        let mut p = plan();
        p.conditions[1].label = p.conditions[0].label.clone();
        assert!(matches!(p.validate(), Err(Error::Config(_))));

        let mut p = plan();
        p.conditions[2].strategy_id = "nope".into();
        assert!(matches!(p.validate(), Err(Error::UnknownId { .. })));

        let mut p = plan();
        p.conditions[2].objective_id = "nope".into();
        assert!(matches!(p.validate(), Err(Error::UnknownId { .. })));

        let mut p = plan();
        p.objectives[0].id = MASKED_SPHERE.into();
        for c in &mut p.conditions {
            c.objective_id = MASKED_SPHERE.into();
        }
        assert!(matches!(p.validate(), Err(Error::Config(_))));

        let mut p = plan();
        p.conditions.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = plan();
        let mut b = plan();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.budget = 11;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 12);
    }

    #[test]
    fn json_round_trip() {
        let p = plan();
        let back: ExperimentPlan = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn builds_each_objective() {
        for id in OBJECTIVE_IDS {
            let b = ObjectiveConfig::new(id, 2, 3).build(1).unwrap();
            assert_eq!(b.handle.space().m(), 6);
            assert_eq!(b.toy.is_some(), id == TOY_MERGE);
        }
        assert!(ObjectiveConfig::new("nope", 2, 3).build(1).is_err());
    }
}
