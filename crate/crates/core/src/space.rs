//! Mixed binary-continuous search space and candidate encoding.
//!
//! A space over `N` source models with `L` layers each has one selection bit
//! and one scaling weight per (model, layer) pair, indexed model-major:
//! `index = model * L + layer`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Aux key under which objectives report how many layers the candidate selects.
pub const ACTIVE_LAYER_COUNT: &str = "active_layer_count";

/// Scaling weight that leaves a selected layer's output unchanged.
pub const NEUTRAL_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct MixedSpace {
    n_models: usize,
    n_layers: usize,
    x_lower: f64,
    x_upper: f64,
}

#[derive(Deserialize)]
struct RawSpace {
    n_models: usize,
    n_layers: usize,
    x_lower: f64,
    x_upper: f64,
}

impl TryFrom<RawSpace> for MixedSpace {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        MixedSpace::new(raw.n_models, raw.n_layers, (raw.x_lower, raw.x_upper))
    }
}

impl MixedSpace {
    /// Default scaling box. The neutral weight 1.0 sits at its center.
    pub const DEFAULT_BOUNDS: (f64, f64) = (0.0, 2.0);

    pub fn new(n_models: usize, n_layers: usize, x_bounds: (f64, f64)) -> Result<Self> {
        let (x_lower, x_upper) = x_bounds;
        if n_models == 0 || n_layers == 0 {
            return Err(Error::ZeroDimension { n_models, n_layers });
        }
        if !(x_lower.is_finite() && x_upper.is_finite() && x_lower < x_upper) {
            return Err(Error::InvalidBounds {
                lower: x_lower,
                upper: x_upper,
            });
        }
        Ok(Self {
            n_models,
            n_layers,
            x_lower,
            x_upper,
        })
    }

    pub fn with_default_bounds(n_models: usize, n_layers: usize) -> Result<Self> {
        Self::new(n_models, n_layers, Self::DEFAULT_BOUNDS)
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    /// Binary dimension.
    pub fn m(&self) -> usize {
        self.n_models * self.n_layers
    }

    /// Continuous dimension; always equal to [`m`](Self::m).
    pub fn n(&self) -> usize {
        self.m()
    }

    pub fn x_lower(&self) -> f64 {
        self.x_lower
    }

    pub fn x_upper(&self) -> f64 {
        self.x_upper
    }

    pub fn width(&self) -> f64 {
        self.x_upper - self.x_lower
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.x_lower + self.x_upper)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.x_lower && v <= self.x_upper
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.x_lower, self.x_upper)
    }

    pub fn index(&self, model: usize, layer: usize) -> usize {
        debug_assert!(model < self.n_models && layer < self.n_layers);
        model * self.n_layers + layer
    }

    /// Checks that `z` and `x` have this space's dimensions.
    pub fn check_dims(&self, z: &BinaryMask, x: &ScalingVector) -> Result<()> {
        if z.len() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                got: z.len(),
            });
        }
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Percentage of the continuous search space left untouched when on
    /// average `mean_active` coordinates are modified per iteration.
    pub fn effective_reduction(&self, mean_active: f64) -> Result<f64> {
        let m = self.m() as f64;
        if !(0.0..=m).contains(&mean_active) {
            return Err(Error::OutOfRange(format!(
                "mean active count {mean_active} outside [0, {m}]"
            )));
        }
        Ok(100.0 * (m - mean_active) / m)
    }
}

pub fn make_space(n_models: usize, n_layers: usize, x_bounds: (f64, f64)) -> Result<MixedSpace> {
    MixedSpace::new(n_models, n_layers, x_bounds)
}

pub fn effective_reduction(space: &MixedSpace, mean_active: f64) -> Result<f64> {
    space.effective_reduction(mean_active)
}

/// Layer-selection bits. Serialized as an array of `0`/`1` integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BinaryMask(Vec<bool>);

impl BinaryMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![false; m])
    }

    pub fn ones(m: usize) -> Self {
        Self(vec![true; m])
    }

    /// Parses a string such as `"1010"`.
    pub fn from_bit_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Malformed(format!("invalid mask character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    /// Mask with bit `k` set iff bit `k` of `code` is set (bit 0 is coordinate 0).
    pub fn from_code(code: u64, m: usize) -> Self {
        Self((0..m).map(|k| (code >> k) & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn set(&mut self, j: usize, on: bool) {
        self.0[j] = on;
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    pub fn hamming(&self, other: &BinaryMask) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

pub fn active_count(z: &BinaryMask) -> usize {
    z.active_count()
}

impl fmt::Display for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Serialize for BinaryMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter().map(|&b| u8::from(b)))
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<u8>::deserialize(deserializer)?;
        raw.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!("mask bit must be 0 or 1, got {other}"))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(BinaryMask)
    }
}

/// Per-layer scaling weights. Bounds are enforced by samplers, not here.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalingVector(Vec<f64>);

impl ScalingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn filled(n: usize, v: f64) -> Self {
        Self(vec![v; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }

    pub fn set(&mut self, j: usize, v: f64) {
        self.0[j] = v;
    }

    pub fn within(&self, space: &MixedSpace) -> bool {
        self.0.iter().all(|&v| space.contains(v))
    }
}

/// Where a candidate came from. Not part of the wire encoding.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Origin {
    pub seed: u64,
    pub iteration: u64,
    pub strategy_id: String,
}

/// One point `(z, x)` of the mixed space.
///
/// The wire form is `{"z": [0|1, ...], "x": [number, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub z: BinaryMask,
    pub x: ScalingVector,
    #[serde(skip)]
    pub origin: Origin,
}

impl Candidate {
    pub fn new(z: BinaryMask, x: ScalingVector) -> Self {
        Self {
            z,
            x,
            origin: Origin::default(),
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn active_count(&self) -> usize {
        self.z.active_count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("candidate serialization is infallible")
    }

    /// First 16 hex characters of the SHA-256 of the wire encoding.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_json().as_bytes());
        hex::encode(&hash[..8])
    }
}

/// Outcome of one objective evaluation. `objective` is minimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aux: BTreeMap<String, f64>,
}

impl EvalResult {
    pub fn new(objective: f64) -> Self {
        Self {
            objective,
            score: None,
            aux: BTreeMap::new(),
        }
    }

    /// Attaches `score = 1 - objective / objective_max`, clamped to `[0, 1]`.
    pub fn scored_against(mut self, objective_max: f64) -> Self {
        self.score = Some((1.0 - self.objective / objective_max).clamp(0.0, 1.0));
        self
    }

    pub fn with_aux(mut self, key: &str, value: f64) -> Self {
        self.aux.insert(key.to_owned(), value);
        self
    }

    pub fn active_count(&self) -> Option<usize> {
        self.aux.get(ACTIVE_LAYER_COUNT).map(|&v| v as usize)
    }
}
