//! Joint optimizer for layer selection and scaling.
//!
//! Selection bits follow independent Bernoulli probabilities updated by a
//! rank-weighted frequency rule with margins `[1/m, 1 - 1/m]`; scaling weights
//! follow a CMA-ES distribution. In masked mode each sample only perturbs and
//! only updates the scaling weights of the layers it selects; the unmasked
//! variant samples and updates every weight regardless of the mask.
//!
//! When the best objective stalls, both distributions restart from their
//! initial state with a fresh sampling seed; best-so-far is kept.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::cma::CmaState;
use super::{rank_order, Strategy, StrategyState, CONDITIONAL_CMA, CONDITIONAL_CMA_UNMASKED};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::space::{BinaryMask, Candidate, EvalResult, MixedSpace, Origin, ScalingVector};

/// A restart fires when the best objective improved by less than this
/// fraction over the stall window.
pub const STALL_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalConfig {
    pub initial_p: f64,
    /// When false the mask probabilities are frozen at `initial_p`.
    pub learn_mask: bool,
    /// Conditional masking of the continuous update.
    pub masking: bool,
    pub lambda: Option<usize>,
    /// Restart both distributions when progress stalls.
    pub restart: bool,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        Self {
            initial_p: 0.5,
            learn_mask: true,
            masking: true,
            lambda: None,
            restart: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskDistribution {
    p: Vec<f64>,
    margin: f64,
    learning_rate: f64,
}

impl MaskDistribution {
    pub fn new(m: usize, initial_p: f64) -> Self {
        // With a single bit the margin interval collapses to {0.5}.
        let margin = 1.0 / m.max(2) as f64;
        Self {
            p: vec![initial_p.clamp(margin, 1.0 - margin); m],
            margin,
            learning_rate: 1.0 / (m as f64).sqrt(),
        }
    }

    /// Unclamped probabilities; never updated with margins.
    fn frozen(m: usize, p: f64) -> Self {
        Self {
            p: vec![p.clamp(0.0, 1.0); m],
            margin: 1.0 / m.max(2) as f64,
            learning_rate: 1.0 / (m as f64).sqrt(),
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn sample(&self, rng: &mut impl Rng) -> BinaryMask {
        BinaryMask::new(self.p.iter().map(|&p| rng.random::<f64>() < p).collect())
    }

    /// `ranked` masks best first; `weights` are the recombination weights of
    /// the leading entries. Bits never set anywhere in the population carry
    /// no evidence and keep their probability.
    pub fn update(&mut self, ranked: &[&BinaryMask], weights: &[f64]) {
        for j in 0..self.p.len() {
            if !ranked.iter().any(|z| z.get(j)) {
                continue;
            }
            let freq: f64 = weights
                .iter()
                .zip(ranked)
                .filter(|(_, z)| z.get(j))
                .map(|(w, _)| w)
                .sum();
            let next = self.p[j] + self.learning_rate * (freq - self.p[j]);
            self.p[j] = next.clamp(self.margin, 1.0 - self.margin);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConditionalMixed {
    state: StrategyState,
    space: MixedSpace,
    config: ConditionalConfig,
    masks: MaskDistribution,
    cma: CmaState,
    mask_rng: ChaCha8Rng,
    pending: Option<Vec<Candidate>>,
    restarts: u64,
    /// Best objective since the last restart, one entry per generation.
    history: Vec<f64>,
}

impl ConditionalMixed {
    pub fn new(space: MixedSpace, seed: u64, config: ConditionalConfig) -> Result<Self> {
        let id = if config.masking {
            CONDITIONAL_CMA
        } else {
            CONDITIONAL_CMA_UNMASKED
        };
        let masks = if config.learn_mask {
            MaskDistribution::new(space.m(), config.initial_p)
        } else {
            MaskDistribution::frozen(space.m(), config.initial_p)
        };
        Ok(Self {
            state: StrategyState::new(id, seed),
            space,
            cma: CmaState::for_space(&space, config.lambda, seed)?,
            masks,
            config,
            mask_rng: stream_rng(seed, streams::MASK),
            pending: None,
            restarts: 0,
            history: Vec::new(),
        })
    }

    fn fresh_masks(&self) -> MaskDistribution {
        if self.config.learn_mask {
            MaskDistribution::new(self.space.m(), self.config.initial_p)
        } else {
            MaskDistribution::frozen(self.space.m(), self.config.initial_p)
        }
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    /// Generations without meaningful progress before a restart.
    fn stall_window(&self) -> usize {
        10 + (30.0 * self.space.n() as f64 / self.cma.population_size() as f64).ceil() as usize
    }

    fn stalled(&self) -> bool {
        let w = self.stall_window();
        if self.history.len() <= w {
            return false;
        }
        let old = self.history[self.history.len() - 1 - w];
        let new = self.history[self.history.len() - 1];
        old - new <= STALL_TOLERANCE * old.abs()
    }

    fn restart(&mut self) -> Result<()> {
        self.restarts += 1;
        let seed = self
            .state
            .rng_seed
            .wrapping_add(self.restarts.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.cma = CmaState::for_space(&self.space, self.config.lambda, seed)?;
        self.masks = self.fresh_masks();
        self.history.clear();
        Ok(())
    }

    pub fn mask_distribution(&self) -> &MaskDistribution {
        &self.masks
    }

    pub fn cma(&self) -> &CmaState {
        &self.cma
    }

    pub fn population_size(&self) -> usize {
        self.cma.population_size()
    }
}

pub fn conditional_mixed_ask(strategy: &mut ConditionalMixed) -> Result<Vec<Candidate>> {
    strategy.ask()
}

pub fn conditional_mixed_tell(
    strategy: &mut ConditionalMixed,
    evaluated: &[(Candidate, EvalResult)],
) -> Result<()> {
    strategy.tell(evaluated)
}

impl Strategy for ConditionalMixed {
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
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        let lambda = self.cma.population_size();
        let zs: Vec<BinaryMask> = (0..lambda).map(|_| self.masks.sample(&mut self.mask_rng)).collect();
        let xs = if self.config.masking {
            self.cma.ask_conditional(&zs)?
        } else {
            self.cma.ask(lambda)?
        };
        let origin = Origin {
            seed: self.state.rng_seed,
            iteration: self.state.iteration,
            strategy_id: self.state.strategy_id.clone(),
        };
        let pop: Vec<Candidate> = zs
            .into_iter()
            .zip(xs)
            .map(|(z, x)| {
                Candidate::new(z, ScalingVector::new(x.as_slice().to_vec())).with_origin(origin.clone())
            })
            .collect();
        self.pending = Some(pop.clone());
        Ok(pop)
    }

    fn tell(&mut self, evaluated: &[(Candidate, EvalResult)]) -> Result<()> {
        let lambda = self.cma.population_size();
        if evaluated.len() != lambda {
            return Err(Error::RankSizeMismatch {
                expected: lambda,
                got: evaluated.len(),
            });
        }
        let order = rank_order(evaluated);
        let points: Vec<nalgebra::DVector<f64>> = order
            .iter()
            .map(|&i| nalgebra::DVector::from_column_slice(evaluated[i].0.x.values()))
            .collect();
        let masks: Vec<&BinaryMask> = order.iter().map(|&i| &evaluated[i].0.z).collect();

        let updated = if self.config.masking {
            let ranked: Vec<_> = points.iter().zip(masks.iter().copied()).collect();
            self.cma.tell_masked(&ranked)
        } else {
            let ranked: Vec<_> = points
                .iter()
                .zip(&order)
                .map(|(x, &i)| (x.clone(), evaluated[i].1.objective))
                .collect();
            self.cma.tell(&ranked)
        };
        if self.config.learn_mask {
            let weights = self.cma.params().weights.clone();
            self.masks.update(&masks, &weights);
        }
        let generation_best = evaluated[order[0]].1.objective;
        let local_best = self.history.last().map_or(generation_best, |b| b.min(generation_best));
        self.history.push(local_best);
        match updated {
            Ok(()) if self.config.restart && self.stalled() => self.restart()?,
            Ok(()) => {}
            Err(Error::DegenerateCovariance(_)) if self.config.restart => self.restart()?,
            Err(e) => return Err(e),
        }
        self.state.record(evaluated);
        self.state.iteration += 1;
        self.pending = None;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{MaskedSphere, Objective};
    use crate::strategies::CmaStrategy;

    fn eval_all(obj: &impl Objective, pop: &[Candidate]) -> Vec<(Candidate, EvalResult)> {
        pop.iter()
            .map(|c| (c.clone(), obj.evaluate_point(&c.z, &c.x).unwrap()))
            .collect()
    }

    #[test]
    fn margins_hold_after_updates() {
        let mut d = MaskDistribution::new(8, 0.5);
        let ones = BinaryMask::ones(8);
        let w = vec![0.5, 0.3, 0.2];
        for _ in 0..100 {
            d.update(&[&ones, &ones, &ones], &w);
        }
        assert!(d.probabilities().iter().all(|&p| p == 1.0 - 1.0 / 8.0));
        let mixed = BinaryMask::from_bit_str("10000000").unwrap();
        for _ in 0..100 {
            d.update(&[&ones, &mixed, &mixed], &[0.0, 0.5, 0.5]);
        }
        assert_eq!(d.probabilities()[0], 1.0 - 1.0 / 8.0);
        assert!(d.probabilities()[1..].iter().all(|&p| p == 1.0 / 8.0));
    }

    #[test]
    fn shared_mask_pulls_probabilities_towards_it() {
        let mut d = MaskDistribution::new(6, 0.5);
        let z = BinaryMask::from_bit_str("110100").unwrap();
        d.update(&[&z, &z, &z], &[0.5, 0.3, 0.2]);
        for j in 0..6 {
            if z.get(j) {
                assert!(d.probabilities()[j] > 0.5);
            } else {
                assert_eq!(d.probabilities()[j], 0.5);
            }
        }
    }

    #[test]
    fn single_bit_space_is_well_defined() {
        let d = MaskDistribution::new(1, 0.9);
        assert_eq!(d.probabilities(), &[0.5]);
    }

    #[test]
    fn coordinate_inactive_everywhere_is_untouched() {
        let space = MixedSpace::with_default_bounds(1, 6).unwrap();
        let obj = MaskedSphere::generate(space, 4, 0.1);
        let mut s = ConditionalMixed::new(space, 8, ConditionalConfig::default()).unwrap();
        // Warm up.
        for _ in 0..4 {
            let pop = s.ask().unwrap();
            let ev = eval_all(&obj, &pop);
            s.tell(&ev).unwrap();
        }
        let mut pop = s.ask().unwrap();
        let j = 3;
        let mean_j = s.cma().mean()[j];
        for c in &mut pop {
            c.z.set(j, false);
            c.x.set(j, mean_j);
        }
        let before = s.clone();
        let ev = eval_all(&obj, &pop);
        s.tell(&ev).unwrap();
        assert_eq!(s.mask_distribution().probabilities()[j], before.masks.probabilities()[j]);
        assert_eq!(s.cma().mean()[j], before.cma.mean()[j]);
        for k in 0..6 {
            assert_eq!(s.cma().covariance()[(j, k)], before.cma.covariance()[(j, k)]);
            assert_eq!(s.cma().covariance()[(k, j)], before.cma.covariance()[(k, j)]);
        }
    }

    #[test]
    fn inactive_coordinates_carry_the_mean() {
        let space = MixedSpace::with_default_bounds(2, 5).unwrap();
        let mut s = ConditionalMixed::new(space, 2, ConditionalConfig::default()).unwrap();
        let mean = s.cma().mean().clone();
        for c in s.ask().unwrap() {
            for j in 0..space.m() {
                if !c.z.get(j) {
                    assert_eq!(c.x.get(j), mean[j]);
                }
            }
            assert!(c.x.within(&space));
        }
    }

    #[test]
    fn frozen_all_ones_is_plain_cma() {
        let space = MixedSpace::with_default_bounds(1, 5).unwrap();
        let obj = MaskedSphere::sphere(space, 3);
        let mut mixed = ConditionalMixed::new(
            space,
            6,
            ConditionalConfig {
                initial_p: 1.0,
                learn_mask: false,
                ..ConditionalConfig::default()
            },
        )
        .unwrap();
        let mut plain = CmaStrategy::new(space, 6).unwrap();
        for _ in 0..15 {
            let a = mixed.ask().unwrap();
            let b = plain.ask().unwrap();
            for (ca, cb) in a.iter().zip(&b) {
                assert_eq!(ca.z, cb.z);
                assert_eq!(ca.x, cb.x);
            }
            mixed.tell(&eval_all(&obj, &a)).unwrap();
            plain.tell(&eval_all(&obj, &b)).unwrap();
        }
    }

    #[test]
    fn reproducible() {
        let space = MixedSpace::with_default_bounds(2, 4).unwrap();
        let obj = MaskedSphere::generate(space, 1, 0.1);
        let trace = |seed| {
            let mut s = ConditionalMixed::new(space, seed, ConditionalConfig::default()).unwrap();
            let mut all = Vec::new();
            for _ in 0..10 {
                let pop = s.ask().unwrap();
                s.tell(&eval_all(&obj, &pop)).unwrap();
                all.extend(pop);
            }
            all
        };
        assert_eq!(trace(5), trace(5));
        assert_ne!(trace(5), trace(6));
    }

    #[test]
    fn flat_objective_triggers_restart() {
        let space = MixedSpace::with_default_bounds(1, 3).unwrap();
        let mut s = ConditionalMixed::new(space, 5, ConditionalConfig::default()).unwrap();
        let window = s.stall_window();
        for g in 0..=window {
            let pop = s.ask().unwrap();
            let ev: Vec<_> = pop.into_iter().map(|c| (c, EvalResult::new(1.0))).collect();
            s.tell(&ev).unwrap();
            let expected = if g < window { 0 } else { 1 };
            assert_eq!(s.restarts(), expected, "generation {g}");
        }
        assert_eq!(s.cma().generation(), 0);
        assert!(s.mask_distribution().probabilities().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn restart_can_be_disabled() {
        let space = MixedSpace::with_default_bounds(1, 3).unwrap();
        let cfg = ConditionalConfig {
            restart: false,
            ..ConditionalConfig::default()
        };
        let mut s = ConditionalMixed::new(space, 5, cfg).unwrap();
        for _ in 0..100 {
            let pop = s.ask().unwrap();
            let ev: Vec<_> = pop.into_iter().map(|c| (c, EvalResult::new(1.0))).collect();
            s.tell(&ev).unwrap();
        }
        assert_eq!(s.restarts(), 0);
    }

    #[test]
    fn tell_rejects_wrong_size() {
        let space = MixedSpace::with_default_bounds(2, 4).unwrap();
        let obj = MaskedSphere::generate(space, 1, 0.1);
        let mut s = ConditionalMixed::new(space, 0, ConditionalConfig::default()).unwrap();
        let pop = s.ask().unwrap();
        let ev = eval_all(&obj, &pop[..2]);
        assert!(matches!(s.tell(&ev), Err(Error::RankSizeMismatch { .. })));
    }
}
