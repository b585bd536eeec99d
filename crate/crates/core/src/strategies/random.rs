//! Random-sampling baselines.
//!
//! The unstructured sampler perturbs every scaling weight with every layer
//! selected. The structured sampler first draws which layers are active and
//! then samples scaling weights for those layers only. Candidate `k` of a run
//! depends only on `(seed, k)`.

use rand::Rng;

use super::{Strategy, StrategyState, STRUCTURED, UNSTRUCTURED};
use crate::error::Result;
use crate::rng::stream_rng;
use crate::space::{BinaryMask, Candidate, EvalResult, MixedSpace, Origin, ScalingVector, NEUTRAL_SCALE};

pub const DEFAULT_MASK_PROBABILITY: f64 = 0.5;

/// Candidates proposed per `ask`; only affects how many can be evaluated
/// concurrently.
pub const DEFAULT_BATCH: usize = 16;

fn origin(seed: u64, iteration: u64, strategy_id: &str) -> Origin {
    Origin {
        seed,
        iteration,
        strategy_id: strategy_id.to_owned(),
    }
}

/// All layers active, every scaling weight uniform in the box.
pub fn unstructured_ask(seed: u64, iteration: u64, space: &MixedSpace) -> Candidate {
    let mut rng = stream_rng(seed, iteration);
    let x = (0..space.n())
        .map(|_| rng.random_range(space.x_lower()..space.x_upper()))
        .collect();
    Candidate::new(BinaryMask::ones(space.m()), ScalingVector::new(x))
        .with_origin(origin(seed, iteration, UNSTRUCTURED))
}

/// Each layer active with probability `p`; active weights uniform in the box,
/// inactive ones left at the neutral scale.
pub fn structured_ask(seed: u64, iteration: u64, space: &MixedSpace, p: f64) -> Candidate {
    let mut rng = stream_rng(seed, iteration);
    let z = BinaryMask::new((0..space.m()).map(|_| rng.random::<f64>() < p).collect());
    let x = z
        .bits()
        .iter()
        .map(|&on| {
            if on {
                rng.random_range(space.x_lower()..space.x_upper())
            } else {
                NEUTRAL_SCALE
            }
        })
        .collect();
    Candidate::new(z, ScalingVector::new(x)).with_origin(origin(seed, iteration, STRUCTURED))
}

#[derive(Debug, Clone)]
pub struct UnstructuredSampler {
    state: StrategyState,
    space: MixedSpace,
    batch: usize,
}

impl UnstructuredSampler {
    pub fn new(space: MixedSpace, seed: u64) -> Self {
        Self {
            state: StrategyState::new(UNSTRUCTURED, seed),
            space,
            batch: DEFAULT_BATCH,
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch.max(1);
        self
    }
}

impl Strategy for UnstructuredSampler {
    fn state(&self) -> &StrategyState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut StrategyState {
        &mut self.state
    }

    fn space(&self) -> &MixedSpace {
        &self.space
    }

    fn ask(&mut self) -> Result<Vec<Candidate>> {
        let start = self.state.iteration;
        Ok((start..start + self.batch as u64)
            .map(|it| unstructured_ask(self.state.rng_seed, it, &self.space))
            .collect())
    }

    fn tell(&mut self, evaluated: &[(Candidate, EvalResult)]) -> Result<()> {
        self.state.record(evaluated);
        self.state.iteration += evaluated.len() as u64;
        Ok(())
    }

    fn observe(&mut self, evaluated: &[(Candidate, EvalResult)]) {
        let _ = self.tell(evaluated);
    }
}

#[derive(Debug, Clone)]
pub struct StructuredSampler {
    state: StrategyState,
    space: MixedSpace,
    p: f64,
    batch: usize,
}

impl StructuredSampler {
    pub fn new(space: MixedSpace, seed: u64) -> Self {
        Self {
            state: StrategyState::new(STRUCTURED, seed),
            space,
            p: DEFAULT_MASK_PROBABILITY,
            batch: DEFAULT_BATCH,
        }
    }

    pub fn with_probability(mut self, p: f64) -> Self {
        self.p = p.clamp(0.0, 1.0);
        self
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch.max(1);
        self
    }
}

impl Strategy for StructuredSampler {
    fn state(&self) -> &StrategyState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut StrategyState {
        &mut self.state
    }

    fn space(&self) -> &MixedSpace {
        &self.space
    }

    fn ask(&mut self) -> Result<Vec<Candidate>> {
        let start = self.state.iteration;
        Ok((start..start + self.batch as u64)
            .map(|it| structured_ask(self.state.rng_seed, it, &self.space, self.p))
            .collect())
    }

    fn tell(&mut self, evaluated: &[(Candidate, EvalResult)]) -> Result<()> {
        self.state.record(evaluated);
        self.state.iteration += evaluated.len() as u64;
        Ok(())
    }

    fn observe(&mut self, evaluated: &[(Candidate, EvalResult)]) {
        let _ = self.tell(evaluated);
    }
}
