//! Toy layer-merging simulator.
//!
//! `N` source "models", each a stack of `L` dense layers of width `d`. A
//! candidate assembles a merged network by walking the layers in the fixed
//! interleaved order `A1, B1, A2, B2, ...`: a selected layer maps
//! `h <- tanh(x * (W h + b))`, a skipped layer passes `h` through unchanged.
//! Targets come from a hidden teacher candidate, so the optimum is 0.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::masked_sphere::non_degenerate_mask;
use super::ps_merge::{PSMergeObjective, ParameterLoss};
use super::Objective;
use crate::error::{Error, Result};
use crate::fixture::{self, float_rows, floats};
use crate::rng::{stream_rng, streams};
use crate::space::{
    BinaryMask, Candidate, EvalResult, MixedSpace, ScalingVector, ACTIVE_LAYER_COUNT, NEUTRAL_SCALE,
};

/// Upper bound on the per-component squared error: inputs and every layer
/// output lie in `[-1, 1]`.
pub const TOY_OBJECTIVE_MAX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Row-major `d x d`.
    #[serde(with = "floats")]
    pub weight: Vec<f64>,
    #[serde(with = "floats")]
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn apply(&self, scale: f64, h: &[f64], out: &mut [f64]) {
        let d = h.len();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weight[r * d..(r + 1) * d];
            let pre = row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.bias[r];
            *o = (scale * pre).tanh();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dataset {
    #[serde(with = "float_rows")]
    inputs: Vec<Vec<f64>>,
    #[serde(with = "float_rows")]
    targets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Teacher {
    z: BinaryMask,
    #[serde(with = "floats")]
    x: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Fixture {
    version: u32,
    kind: String,
    space: MixedSpace,
    dim: usize,
    /// Indexed `model * n_layers + layer`.
    layers: Vec<DenseLayer>,
    dataset: Dataset,
    teacher: Teacher,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyMergeObjective {
    space: MixedSpace,
    dim: usize,
    layers: Vec<DenseLayer>,
    dataset: Dataset,
    teacher: Teacher,
    fixture_hash: String,
}

/// Fixed traversal order: layer-major, then model (`A1, B1, A2, B2, ...`).
fn layer_order(space: &MixedSpace) -> impl Iterator<Item = usize> + '_ {
    (0..space.n_layers()).flat_map(move |j| (0..space.n_models()).map(move |i| space.index(i, j)))
}

fn mean_squared_error(outputs: impl Iterator<Item = Vec<f64>>, targets: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (out, target) in outputs.zip(targets) {
        for (o, t) in out.iter().zip(target) {
            total += (o - t) * (o - t);
            count += 1;
        }
    }
    total / count as f64
}

/// Runs `layers` in order on `input`, each with its scale.
fn forward<'a>(steps: impl Iterator<Item = (&'a DenseLayer, f64)>, input: &[f64]) -> Vec<f64> {
    let mut h = input.to_vec();
    let mut next = vec![0.0; h.len()];
    for (layer, scale) in steps {
        layer.apply(scale, &h, &mut next);
        std::mem::swap(&mut h, &mut next);
    }
    h
}

impl ToyMergeObjective {
    /// Random teacher instance over `n_models` source stacks.
    pub fn generate(
        seed: u64,
        n_models: usize,
        n_layers: usize,
        dim: usize,
        dataset_size: usize,
    ) -> Result<Self> {
        if dim == 0 || dataset_size == 0 {
            return Err(Error::Config(format!(
                "toy merge instance needs dim >= 1 and dataset_size >= 1 (got {dim}, {dataset_size})"
            )));
        }
        let space = MixedSpace::with_default_bounds(n_models, n_layers)?;
        let mut rng = stream_rng(seed, streams::INSTANCE);
        let weight_dist = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("valid std");
        let bias_dist = Normal::new(0.0, 0.1).expect("valid std");

        let layers: Vec<DenseLayer> = (0..space.m())
            .map(|_| DenseLayer {
                weight: (0..dim * dim).map(|_| weight_dist.sample(&mut rng)).collect(),
                bias: (0..dim).map(|_| bias_dist.sample(&mut rng)).collect(),
            })
            .collect();

        let z = non_degenerate_mask(&mut rng, space.m());
        let x = z
            .bits()
            .iter()
            .map(|&on| if on { rng.random_range(0.5..1.5) } else { NEUTRAL_SCALE })
            .collect::<Vec<f64>>();
        let teacher = Teacher { z, x };

        let inputs: Vec<Vec<f64>> = (0..dataset_size)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();

        let mut obj = Self {
            space,
            dim,
            layers,
            dataset: Dataset {
                inputs,
                targets: Vec::new(),
            },
            teacher,
            fixture_hash: String::new(),
        };
        let teacher_x = ScalingVector::new(obj.teacher.x.clone());
        obj.dataset.targets = obj
            .dataset
            .inputs
            .iter()
            .map(|input| obj.merged_output(&obj.teacher.z, &teacher_x, input))
            .collect();
        obj.fixture_hash = fixture::hash_json(&obj.to_fixture_json());
        Ok(obj)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dataset_size(&self) -> usize {
        self.dataset.inputs.len()
    }

    pub fn layer(&self, model: usize, layer: usize) -> &DenseLayer {
        &self.layers[self.space.index(model, layer)]
    }

    pub fn teacher(&self) -> Candidate {
        Candidate::new(self.teacher.z.clone(), ScalingVector::new(self.teacher.x.clone()))
    }

    /// "Model A alone": every layer of model 0 at neutral scale, nothing else.
    pub fn baseline_candidate(&self) -> Candidate {
        baseline_candidate(&self.space)
    }

    pub fn merged_output(&self, z: &BinaryMask, x: &ScalingVector, input: &[f64]) -> Vec<f64> {
        let steps = layer_order(&self.space)
            .filter(|&k| z.get(k))
            .map(|k| (&self.layers[k], x.get(k)));
        forward(steps, input)
    }

    /// Parameter-space merge of the first two source models: each layer's
    /// weights are interpolated and the resulting `L`-layer stack is run at
    /// neutral scale.
    pub fn ps_merge(&self) -> Result<PSMergeObjective> {
        if self.space.n_models() != 2 {
            return Err(Error::Config(format!(
                "parameter-space merging needs exactly 2 source models, got {}",
                self.space.n_models()
            )));
        }
        let flatten = |model: usize| -> Vec<f64> {
            (0..self.space.n_layers())
                .flat_map(|j| {
                    let l = self.layer(model, j);
                    l.weight.iter().chain(&l.bias).copied().collect::<Vec<_>>()
                })
                .collect()
        };
        let loss = StackLoss {
            dim: self.dim,
            n_layers: self.space.n_layers(),
            dataset: self.dataset.clone(),
        };
        PSMergeObjective::new(flatten(0), flatten(1), Box::new(loss))
    }

    pub fn to_fixture_json(&self) -> String {
        let f = Fixture {
            version: fixture::FIXTURE_VERSION,
            kind: "toy-merge".into(),
            space: self.space,
            dim: self.dim,
            layers: self.layers.clone(),
            dataset: self.dataset.clone(),
            teacher: self.teacher.clone(),
        };
        serde_json::to_string(&f).expect("fixture serialization is infallible")
    }

    pub fn from_fixture_json(json: &str) -> Result<Self> {
        let f: Fixture = serde_json::from_str(json)?;
        fixture::check_version::<serde_json::Error>(f.version)?;
        fixture::check_kind(&f.kind, "toy-merge")?;
        let bad = |what: &str| Error::Malformed(format!("toy merge fixture: {what}"));
        if f.layers.len() != f.space.m() {
            return Err(bad("layer count does not match space"));
        }
        if f.layers
            .iter()
            .any(|l| l.weight.len() != f.dim * f.dim || l.bias.len() != f.dim)
        {
            return Err(bad("layer shape does not match dim"));
        }
        let ds = &f.dataset;
        if ds.inputs.is_empty()
            || ds.inputs.len() != ds.targets.len()
            || ds.inputs.iter().chain(&ds.targets).any(|v| v.len() != f.dim)
        {
            return Err(bad("dataset shape"));
        }
        if f.teacher.z.len() != f.space.m() || f.teacher.x.len() != f.space.n() {
            return Err(bad("teacher dimensions"));
        }
        let mut obj = Self {
            space: f.space,
            dim: f.dim,
            layers: f.layers,
            dataset: f.dataset,
            teacher: f.teacher,
            fixture_hash: String::new(),
        };
        obj.fixture_hash = fixture::hash_json(&obj.to_fixture_json());
        Ok(obj)
    }
}

pub fn baseline_candidate(space: &MixedSpace) -> Candidate {
    let z = BinaryMask::new((0..space.m()).map(|k| k < space.n_layers()).collect());
    Candidate::new(z, ScalingVector::filled(space.n(), NEUTRAL_SCALE))
}

/// Two source models with `n_layers` layers of width `dim`; teacher mask is
/// non-degenerate.
pub fn make_teacher_instance(
    seed: u64,
    n_layers: usize,
    dim: usize,
    dataset_size: usize,
) -> Result<ToyMergeObjective> {
    ToyMergeObjective::generate(seed, 2, n_layers, dim, dataset_size)
}

pub fn toy_merge_eval(obj: &ToyMergeObjective, c: &Candidate) -> Result<EvalResult> {
    obj.space.check_dims(&c.z, &c.x)?;
    obj.evaluate_point(&c.z, &c.x)
}

impl Objective for ToyMergeObjective {
    fn id(&self) -> &str {
        "toy-merge"
    }

    fn space(&self) -> &MixedSpace {
        &self.space
    }

    fn evaluate_point(&self, z: &BinaryMask, x: &ScalingVector) -> Result<EvalResult> {
        let outputs = self
            .dataset
            .inputs
            .iter()
            .map(|input| self.merged_output(z, x, input));
        let mse = mean_squared_error(outputs, &self.dataset.targets);
        Ok(EvalResult::new(mse)
            .scored_against(TOY_OBJECTIVE_MAX)
            .with_aux(ACTIVE_LAYER_COUNT, z.active_count() as f64))
    }

    fn fixture_hash(&self) -> Option<String> {
        Some(self.fixture_hash.clone())
    }
}

/// Downstream loss of a parameter-merged stack: `theta` holds
/// `[W_1, b_1, W_2, b_2, ...]` for `n_layers` layers.
#[derive(Debug, Clone)]
struct StackLoss {
    dim: usize,
    n_layers: usize,
    dataset: Dataset,
}

impl ParameterLoss for StackLoss {
    fn loss(&self, theta: &[f64]) -> f64 {
        let per_layer = self.dim * self.dim + self.dim;
        let layers: Vec<DenseLayer> = theta
            .chunks(per_layer)
            .map(|chunk| DenseLayer {
                weight: chunk[..self.dim * self.dim].to_vec(),
                bias: chunk[self.dim * self.dim..].to_vec(),
            })
            .collect();
        debug_assert_eq!(layers.len(), self.n_layers);
        let outputs = self
            .dataset
            .inputs
            .iter()
            .map(|input| forward(layers.iter().map(|l| (l, NEUTRAL_SCALE)), input));
        mean_squared_error(outputs, &self.dataset.targets)
    }

    fn loss_max(&self) -> Option<f64> {
        Some(TOY_OBJECTIVE_MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_is_optimal() {
        for seed in 0..20 {
            let obj = make_teacher_instance(seed, 4, 3, 6).unwrap();
            let r = toy_merge_eval(&obj, &obj.teacher()).unwrap();
            assert_eq!(r.objective, 0.0, "seed {seed}");
            assert_eq!(r.score, Some(1.0));
        }
    }

    #[test]
    fn all_zero_mask_is_identity_and_ignores_x() {
        let obj = make_teacher_instance(3, 3, 4, 10).unwrap();
        let m = obj.space().m();
        let expected = mean_squared_error(
            obj.dataset.inputs.iter().cloned(),
            &obj.dataset.targets,
        );
        for v in [0.0, 0.37, 1.0, 2.0] {
            let c = Candidate::new(BinaryMask::zeros(m), ScalingVector::filled(m, v));
            assert_eq!(toy_merge_eval(&obj, &c).unwrap().objective, expected);
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let a = make_teacher_instance(42, 5, 3, 7).unwrap();
        let b = make_teacher_instance(42, 5, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_fixture_json(), b.to_fixture_json());
        let c = make_teacher_instance(43, 5, 3, 7).unwrap();
        assert_ne!(a.to_fixture_json(), c.to_fixture_json());
    }

    #[test]
    fn teacher_masks_vary_with_seed() {
        let masks: std::collections::HashSet<String> = (0..100)
            .map(|s| make_teacher_instance(s, 8, 2, 2).unwrap().teacher().z.to_string())
            .collect();
        assert!(masks.len() >= 90, "only {} distinct masks", masks.len());
    }

    #[test]
    fn teacher_mask_non_degenerate() {
        for seed in 0..100 {
            let obj = make_teacher_instance(seed, 1, 2, 2).unwrap();
            let k = obj.teacher().active_count();
            assert!(k > 0 && k < obj.space().m());
        }
    }

    #[test]
    fn order_matters() {
        // Swapping the roles of two selected layers changes the output.
        let obj = make_teacher_instance(9, 2, 3, 5).unwrap();
        let x = ScalingVector::filled(4, 1.0);
        let ab = BinaryMask::from_bit_str("1001").unwrap(); // A1 then B2
        let ba = BinaryMask::from_bit_str("0110").unwrap(); // B1 then A2
        let input = [0.3, -0.5, 0.8];
        assert_ne!(obj.merged_output(&ab, &x, &input), obj.merged_output(&ba, &x, &input));
    }

    #[test]
    fn fixture_round_trip_exact() {
        let obj = make_teacher_instance(5, 3, 2, 4).unwrap();
        let back = ToyMergeObjective::from_fixture_json(&obj.to_fixture_json()).unwrap();
        assert_eq!(back, obj);
        assert_eq!(back.fixture_hash(), obj.fixture_hash());
    }

    #[test]
    fn fixture_rejects_wrong_version_and_shape() {
        let obj = make_teacher_instance(5, 2, 2, 3).unwrap();
        let json = obj.to_fixture_json().replacen("\"version\":1", "\"version\":9", 1);
        assert!(ToyMergeObjective::from_fixture_json(&json).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&obj.to_fixture_json()).unwrap();
        v["dim"] = serde_json::json!(3);
        assert!(ToyMergeObjective::from_fixture_json(&v.to_string()).is_err());
    }

    #[test]
    fn rejects_empty_dataset() {
        assert!(make_teacher_instance(1, 2, 2, 0).is_err());
        assert!(make_teacher_instance(1, 0, 2, 3).is_err());
    }

    #[test]
    fn ps_endpoint_matches_baseline_bits() {
        let obj = make_teacher_instance(8, 4, 3, 6).unwrap();
        let ps = obj.ps_merge().unwrap();
        let base = toy_merge_eval(&obj, &obj.baseline_candidate()).unwrap();
        let at_zero = ps.ps_merge_eval(0.0).unwrap();
        assert_eq!(at_zero.objective.to_bits(), base.objective.to_bits());
    }

    #[test]
    fn ps_needs_two_models() {
        let obj = ToyMergeObjective::generate(1, 3, 2, 2, 2).unwrap();
        assert!(obj.ps_merge().is_err());
    }
}
