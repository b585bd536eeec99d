//! Ask/tell optimizers over a [`MixedSpace`].
//!
//! `ask` proposes a population, the caller evaluates it (possibly in
//! parallel), and `tell` hands back every member with its result in
//! evaluation order. Strategies rank internally by `(objective, order)`.

use crate::error::{Error, Result};
use crate::space::{Candidate, EvalResult, MixedSpace};

pub mod cma;
pub mod conditional;
pub mod random;

pub use cma::{cma_ask, cma_tell, CmaParams, CmaState, CmaStrategy};
pub use conditional::{ConditionalConfig, ConditionalMixed, MaskDistribution};
pub use random::{structured_ask, unstructured_ask, StructuredSampler, UnstructuredSampler};

pub const UNSTRUCTURED: &str = "unstructured";
pub const STRUCTURED: &str = "structured";
pub const CMA: &str = "cma";
pub const CONDITIONAL_CMA: &str = "conditional-cma";
pub const CONDITIONAL_CMA_UNMASKED: &str = "conditional-cma-unmasked";

pub const STRATEGY_IDS: [&str; 5] = [
    UNSTRUCTURED,
    STRUCTURED,
    CMA,
    CONDITIONAL_CMA,
    CONDITIONAL_CMA_UNMASKED,
];

/// Bookkeeping shared by every strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyState {
    pub strategy_id: String,
    pub rng_seed: u64,
    pub iteration: u64,
    pub budget_spent: u64,
    pub best: Option<(Candidate, EvalResult)>,
}

impl StrategyState {
    pub fn new(strategy_id: &str, rng_seed: u64) -> Self {
        Self {
            strategy_id: strategy_id.to_owned(),
            rng_seed,
            iteration: 0,
            budget_spent: 0,
            best: None,
        }
    }

    /// Counts the evaluations and updates best-so-far. On equal objectives
    /// the earlier candidate is kept.
    pub fn record(&mut self, evaluated: &[(Candidate, EvalResult)]) {
        self.budget_spent += evaluated.len() as u64;
        for (c, r) in evaluated {
            let better = match &self.best {
                None => true,
                Some((_, b)) => r.objective < b.objective,
            };
            if better {
                self.best = Some((c.clone(), r.clone()));
            }
        }
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, r)| r.objective)
    }
}

pub trait Strategy: Send {
    fn state(&self) -> &StrategyState;

    fn state_mut(&mut self) -> &mut StrategyState;

    fn space(&self) -> &MixedSpace;

    fn id(&self) -> &str {
        &self.state().strategy_id
    }

    fn ask(&mut self) -> Result<Vec<Candidate>>;

    /// Receives the full population returned by the last `ask`, evaluated.
    fn tell(&mut self, evaluated: &[(Candidate, EvalResult)]) -> Result<()>;

    /// Records evaluations of a truncated population without updating the
    /// search distribution (used when the budget ends mid-population).
    fn observe(&mut self, evaluated: &[(Candidate, EvalResult)]) {
        self.state_mut().record(evaluated);
    }
}

/// Indices of `evaluated` sorted by objective, ties broken by position.
pub fn rank_order(evaluated: &[(Candidate, EvalResult)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..evaluated.len()).collect();
    order.sort_by(|&a, &b| evaluated[a].1.objective.total_cmp(&evaluated[b].1.objective));
    order
}

pub fn build_strategy(id: &str, space: MixedSpace, seed: u64) -> Result<Box<dyn Strategy>> {
    Ok(match id {
        UNSTRUCTURED => Box::new(UnstructuredSampler::new(space, seed)),
        STRUCTURED => Box::new(StructuredSampler::new(space, seed)),
        CMA => Box::new(CmaStrategy::new(space, seed)?),
        CONDITIONAL_CMA => Box::new(ConditionalMixed::new(space, seed, ConditionalConfig::default())?),
        CONDITIONAL_CMA_UNMASKED => Box::new(ConditionalMixed::new(
            space,
            seed,
            ConditionalConfig {
                masking: false,
                ..ConditionalConfig::default()
            },
        )?),
        other => {
            return Err(Error::UnknownId {
                kind: "strategy",
                id: other.to_owned(),
            })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{BinaryMask, ScalingVector};

    fn ev(obj: f64, tag: f64) -> (Candidate, EvalResult) {
        (
            Candidate::new(BinaryMask::ones(1), ScalingVector::filled(1, tag)),
            EvalResult::new(obj),
        )
    }

    #[test]
    fn ranking_is_stable() {
        let pop = vec![ev(2.0, 0.0), ev(1.0, 1.0), ev(2.0, 2.0), ev(1.0, 3.0)];
        assert_eq!(rank_order(&pop), vec![1, 3, 0, 2]);
    }

    #[test]
    fn best_keeps_earliest_on_ties() {
        let mut s = StrategyState::new("t", 0);
        s.record(&[ev(1.0, 0.0), ev(1.0, 1.0)]);
        s.record(&[ev(1.0, 2.0)]);
        assert_eq!(s.best.as_ref().unwrap().0.x.get(0), 0.0);
        assert_eq!(s.budget_spent, 3);
        s.record(&[ev(0.5, 4.0)]);
        assert_eq!(s.best_objective(), Some(0.5));
    }

    #[test]
    fn unknown_strategy_id() {
        let space = MixedSpace::with_default_bounds(1, 2).unwrap();
        assert!(matches!(build_strategy("nope", space, 0), Err(Error::UnknownId { .. })));
        for id in STRATEGY_IDS {
            assert_eq!(build_strategy(id, space, 0).unwrap().id(), id);
        }
    }
}
