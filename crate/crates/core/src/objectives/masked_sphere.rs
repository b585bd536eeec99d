//! Sphere restricted to the selected coordinates, plus a Hamming penalty
//! towards a preferred mask:
//!
//! `f(x, z) = sum_{j : z_j = 1} (x_j - t_j)^2 + lambda * hamming(z, z*)`

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::fixture::{self, floats};
use crate::rng::{stream_rng, streams};
use crate::space::{BinaryMask, Candidate, EvalResult, MixedSpace, ScalingVector, ACTIVE_LAYER_COUNT};

pub const DEFAULT_SUBSET_PENALTY: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSphere {
    id: String,
    space: MixedSpace,
    targets: Vec<f64>,
    subset_penalty: f64,
    preferred: BinaryMask,
    objective_max: f64,
    fixture_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Fixture {
    version: u32,
    kind: String,
    space: MixedSpace,
    #[serde(with = "floats")]
    targets: Vec<f64>,
    #[serde(with = "floats")]
    subset_penalty: Vec<f64>,
    preferred_mask: BinaryMask,
}

impl MaskedSphere {
    pub fn new(
        space: MixedSpace,
        targets: Vec<f64>,
        subset_penalty: f64,
        preferred: BinaryMask,
    ) -> Result<Self> {
        if targets.len() != space.n() {
            return Err(Error::DimensionMismatch {
                expected: space.n(),
                got: targets.len(),
            });
        }
        if preferred.len() != space.m() {
            return Err(Error::DimensionMismatch {
                expected: space.m(),
                got: preferred.len(),
            });
        }
        if !(subset_penalty.is_finite() && subset_penalty >= 0.0) {
            return Err(Error::OutOfRange(format!(
                "subset penalty must be finite and >= 0, got {subset_penalty}"
            )));
        }
        if let Some(t) = targets.iter().find(|t| !space.contains(**t)) {
            return Err(Error::OutOfRange(format!("target {t} outside the scaling box")));
        }
        let lo = space.x_lower();
        let hi = space.x_upper();
        let objective_max = targets
            .iter()
            .map(|t| (t - lo).powi(2).max((hi - t).powi(2)))
            .sum::<f64>()
            + subset_penalty * space.m() as f64;
        let mut sphere = Self {
            id: "masked-sphere".into(),
            space,
            targets,
            subset_penalty,
            preferred,
            objective_max,
            fixture_hash: String::new(),
        };
        sphere.fixture_hash = fixture::hash_json(&sphere.to_fixture_json());
        Ok(sphere)
    }

    /// Random instance: targets in the inner 80% of the box, and a preferred
    /// mask with at least one selected and one skipped layer when `m >= 2`.
    pub fn generate(space: MixedSpace, seed: u64, subset_penalty: f64) -> Self {
        let mut rng = stream_rng(seed, streams::INSTANCE);
        let margin = 0.1 * space.width();
        let targets = (0..space.n())
            .map(|_| rng.random_range(space.x_lower() + margin..=space.x_upper() - margin))
            .collect();
        let preferred = non_degenerate_mask(&mut rng, space.m());
        Self::new(space, targets, subset_penalty, preferred)
            .expect("generated instance satisfies invariants")
    }

    /// Plain sphere: the preferred mask selects everything.
    pub fn sphere(space: MixedSpace, seed: u64) -> Self {
        let mut rng = stream_rng(seed, streams::INSTANCE);
        let margin = 0.1 * space.width();
        let targets = (0..space.n())
            .map(|_| rng.random_range(space.x_lower() + margin..=space.x_upper() - margin))
            .collect();
        let mut s = Self::new(space, targets, DEFAULT_SUBSET_PENALTY, BinaryMask::ones(space.m()))
            .expect("generated instance satisfies invariants");
        s.id = "sphere".into();
        s
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn subset_penalty(&self) -> f64 {
        self.subset_penalty
    }

    pub fn preferred_mask(&self) -> &BinaryMask {
        &self.preferred
    }

    pub fn objective_max(&self) -> f64 {
        self.objective_max
    }

    /// The known global optimum `(z*, t)`.
    pub fn optimum(&self) -> Candidate {
        let x = self
            .preferred
            .bits()
            .iter()
            .zip(&self.targets)
            .map(|(&on, &t)| if on { t } else { crate::space::NEUTRAL_SCALE })
            .collect();
        Candidate::new(self.preferred.clone(), ScalingVector::new(x))
    }

    pub fn to_fixture_json(&self) -> String {
        let f = Fixture {
            version: fixture::FIXTURE_VERSION,
            kind: self.id.clone(),
            space: self.space,
            targets: self.targets.clone(),
            subset_penalty: vec![self.subset_penalty],
            preferred_mask: self.preferred.clone(),
        };
        serde_json::to_string(&f).expect("fixture serialization is infallible")
    }

    pub fn from_fixture_json(json: &str) -> Result<Self> {
        let f: Fixture = serde_json::from_str(json)?;
        fixture::check_version::<serde_json::Error>(f.version)?;
        if f.kind != "masked-sphere" && f.kind != "sphere" {
            fixture::check_kind(&f.kind, "masked-sphere")?;
        }
        let [penalty] = f.subset_penalty[..] else {
            return Err(Error::Malformed("subset_penalty must hold one value".into()));
        };
        let mut s = Self::new(f.space, f.targets, penalty, f.preferred_mask)?;
        s.id = f.kind;
        Ok(s)
    }
}

pub fn masked_sphere_eval(obj: &MaskedSphere, c: &Candidate) -> Result<EvalResult> {
    obj.space.check_dims(&c.z, &c.x)?;
    obj.evaluate_point(&c.z, &c.x)
}

impl Objective for MaskedSphere {
    fn id(&self) -> &str {
        &self.id
    }

    fn space(&self) -> &MixedSpace {
        &self.space
    }

    fn evaluate_point(&self, z: &BinaryMask, x: &ScalingVector) -> Result<EvalResult> {
        let fit: f64 = z
            .active_indices()
            .map(|j| (x.get(j) - self.targets[j]).powi(2))
            .sum();
        let objective = fit + self.subset_penalty * z.hamming(&self.preferred) as f64;
        Ok(EvalResult::new(objective)
            .scored_against(self.objective_max)
            .with_aux(ACTIVE_LAYER_COUNT, z.active_count() as f64))
    }

    fn fixture_hash(&self) -> Option<String> {
        Some(self.fixture_hash.clone())
    }
}

pub(crate) fn non_degenerate_mask(rng: &mut impl Rng, m: usize) -> BinaryMask {
    if m == 1 {
        return BinaryMask::ones(1);
    }
    loop {
        let mask = BinaryMask::new((0..m).map(|_| rng.random_bool(0.5)).collect());
        let k = mask.active_count();
        if k > 0 && k < m {
            return mask;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MaskedSphere {
        let space = MixedSpace::with_default_bounds(1, 4).unwrap();
        MaskedSphere::new(
            space,
            vec![1.0, 2.0, 3.0, 4.0].into_iter().map(|t| t / 2.0).collect(),
            0.1,
            BinaryMask::from_bit_str("1010").unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_at_preferred_mask_and_targets() {
        let s = small();
        let r = masked_sphere_eval(&s, &s.optimum()).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.score, Some(1.0));
        assert_eq!(r.active_count(), Some(2));
    }

    #[test]
    fn inactive_coordinate_moved_to_upper_bound_is_inert() {
        let s = small();
        let mut c = s.optimum();
        c.x.set(1, s.space.x_upper());
        assert_eq!(masked_sphere_eval(&s, &c).unwrap().objective, 0.0);
    }

    #[test]
    fn single_active_term_at_optimum() {
        let space = MixedSpace::with_default_bounds(1, 3).unwrap();
        let s = MaskedSphere::new(space, vec![0.7, 1.2, 1.9], 0.0, BinaryMask::ones(3)).unwrap();
        let c = Candidate::new(
            BinaryMask::from_bit_str("100").unwrap(),
            ScalingVector::new(vec![0.7, 0.0, 2.0]),
        );
        assert_eq!(masked_sphere_eval(&s, &c).unwrap().objective, 0.0);
    }

    #[test]
    fn hamming_penalty() {
        let s = small();
        let mut c = s.optimum();
        c.z.set(1, true);
        c.x.set(1, s.targets()[1]);
        let v = masked_sphere_eval(&s, &c).unwrap().objective;
        assert!((v - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_construction() {
        let space = MixedSpace::with_default_bounds(1, 2).unwrap();
        assert!(MaskedSphere::new(space, vec![1.0], 0.1, BinaryMask::ones(2)).is_err());
        assert!(MaskedSphere::new(space, vec![1.0, 1.0], -0.1, BinaryMask::ones(2)).is_err());
        assert!(MaskedSphere::new(space, vec![1.0, 3.0], 0.1, BinaryMask::ones(2)).is_err());
        assert!(MaskedSphere::new(space, vec![1.0, 1.0], 0.1, BinaryMask::ones(3)).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let s = small();
        let c = Candidate::new(BinaryMask::ones(3), ScalingVector::filled(4, 1.0));
        assert!(matches!(masked_sphere_eval(&s, &c), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn fixture_round_trip() {
        let space = MixedSpace::with_default_bounds(2, 5).unwrap();
        let s = MaskedSphere::generate(space, 11, 0.1);
        let back = MaskedSphere::from_fixture_json(&s.to_fixture_json()).unwrap();
        assert_eq!(back, s);
        let sph = MaskedSphere::sphere(space, 2);
        assert_eq!(MaskedSphere::from_fixture_json(&sph.to_fixture_json()).unwrap(), sph);
    }

    #[test]
    fn generated_preferred_mask_is_non_degenerate() {
        let space = MixedSpace::with_default_bounds(1, 2).unwrap();
        for seed in 0..50 {
            let k = MaskedSphere::generate(space, seed, 0.1).preferred_mask().active_count();
            assert_eq!(k, 1);
        }
    }
}
