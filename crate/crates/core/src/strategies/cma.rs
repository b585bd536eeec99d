//! CMA-ES with the standard `(mu/mu_w, lambda)` update: cumulative step-size
//! adaptation, rank-one and rank-mu covariance updates, positive
//! log-weights, and box handling by resampling then clamping.
//!
//! Besides the plain update, [`CmaState`] supports a conditional mode used by
//! the mixed optimizer: each sample carries an activity mask, inactive
//! coordinates stay at the mean, and coordinates inactive in the whole
//! population keep their mean, path entries and covariance rows untouched.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{rank_order, Strategy, StrategyState, CMA};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::space::{BinaryMask, Candidate, EvalResult, MixedSpace, Origin, ScalingVector};

/// Extra draws per sample before falling back to clamping.
pub const MAX_RESAMPLES: usize = 10;

/// Initial step size as a fraction of the box width.
pub const SIGMA0_FRACTION: f64 = 0.3;

const MAX_CONDITION: f64 = 1e14;

/// `E ||N(0, I_n)||`, with `n` allowed to be fractional.
pub fn expected_norm(n: f64) -> f64 {
    n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaParams {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c1: f64,
    pub c_mu: f64,
}

impl CmaParams {
    /// Published defaults for dimension `n`; `lambda` defaults to
    /// `4 + floor(3 ln n)`.
    pub fn new(n: usize, lambda: Option<usize>) -> Self {
        let nf = n as f64;
        let lambda = lambda
            .unwrap_or_else(|| 4 + (3.0 * nf.ln()).floor() as usize)
            .max(2);
        let mu = lambda / 2;
        let raw: Vec<f64> = (0..mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        Self {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c1,
            c_mu,
        }
    }
}

/// Sampling factor `A` with `A A^T = Cov` on the coordinates `index`.
#[derive(Debug, Clone)]
struct Factor {
    index: Vec<usize>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
}

impl Factor {
    fn of(cov: DMatrix<f64>, index: Vec<usize>) -> Result<Self> {
        let eig = SymmetricEigen::new(cov);
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        if !(min.is_finite() && max.is_finite()) || min <= 0.0 || max / min > MAX_CONDITION {
            return Err(Error::DegenerateCovariance(format!(
                "eigenvalues in [{min:e}, {max:e}]"
            )));
        }
        Ok(Self {
            index,
            basis: eig.eigenvectors,
            scales: eig.eigenvalues.map(f64::sqrt),
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let xi = DVector::from_fn(self.scales.len(), |i, _| {
            self.scales[i] * rng.sample::<f64, _>(StandardNormal)
        });
        &self.basis * xi
    }

    /// `Cov^{-1/2} v` for `v` restricted to `index`.
    fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        let proj = self.basis.transpose() * v;
        let scaled = proj.component_div(&self.scales);
        &self.basis * scaled
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[derive(Debug, Clone)]
pub struct CmaState {
    params: CmaParams,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    lower: f64,
    upper: f64,
    generation: u64,
    factor: Factor,
    rng: ChaCha8Rng,
}

impl PartialEq for CmaState {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.mean == other.mean
            && self.sigma == other.sigma
            && self.cov == other.cov
            && self.p_sigma == other.p_sigma
            && self.p_c == other.p_c
            && self.lower == other.lower
            && self.upper == other.upper
            && self.generation == other.generation
            && self.rng == other.rng
    }
}

impl CmaState {
    pub fn new(
        mean: Vec<f64>,
        sigma: f64,
        bounds: (f64, f64),
        lambda: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::Config("CMA-ES needs at least one dimension".into()));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::OutOfRange(format!("step size {sigma} must be > 0")));
        }
        let (lower, upper) = bounds;
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidBounds { lower, upper });
        }
        let cov = DMatrix::identity(n, n);
        let factor = Factor::of(cov.clone(), (0..n).collect())?;
        Ok(Self {
            params: CmaParams::new(n, lambda),
            mean: DVector::from_vec(mean),
            sigma,
            cov,
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            lower,
            upper,
            generation: 0,
            factor,
            rng: stream_rng(seed, streams::CMA),
        })
    }

    /// Mean at the box center, step size `0.3 * width`.
    pub fn for_space(space: &MixedSpace, lambda: Option<usize>, seed: u64) -> Result<Self> {
        Self::new(
            vec![space.center(); space.n()],
            SIGMA0_FRACTION * space.width(),
            (space.x_lower(), space.x_upper()),
            lambda,
            seed,
        )
    }

    pub fn params(&self) -> &CmaParams {
        &self.params
    }

    pub fn population_size(&self) -> usize {
        self.params.lambda
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma;
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn evolution_paths(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.p_sigma, &self.p_c)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    fn in_box(&self, x: &DVector<f64>, active: Option<&BinaryMask>) -> bool {
        x.iter()
            .enumerate()
            .filter(|(j, _)| active.is_none_or(|a| a.get(*j)))
            .all(|(_, &v)| v >= self.lower && v <= self.upper)
    }

    fn check_sampleable(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::DegenerateCovariance(format!("step size {}", self.sigma)));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateCovariance("non-finite mean".into()));
        }
        Ok(())
    }

    /// Draws one point from `mean + sigma * factor`, with `active` restricting
    /// both where noise is applied and where the box is checked.
    fn draw(&mut self, factor: &Factor, active: Option<&BinaryMask>) -> DVector<f64> {
        let mut x = self.mean.clone();
        for attempt in 0..=MAX_RESAMPLES {
            let y = factor.sample(&mut self.rng);
            x.copy_from(&self.mean);
            for (k, &j) in factor.index.iter().enumerate() {
                if active.is_none_or(|a| a.get(j)) {
                    x[j] += self.sigma * y[k];
                }
            }
            if self.in_box(&x, active) || attempt == MAX_RESAMPLES {
                break;
            }
        }
        x.apply(|v| *v = v.clamp(self.lower, self.upper));
        x
    }

    /// `count` points from the current distribution, inside the box.
    pub fn ask(&mut self, count: usize) -> Result<Vec<DVector<f64>>> {
        self.check_sampleable()?;
        let factor = self.factor.clone();
        Ok((0..count).map(|_| self.draw(&factor, None)).collect())
    }

    /// One point per mask. Coordinates active in no mask are held at the
    /// mean, and the rest are drawn from the distribution conditioned on
    /// that; coordinates inactive in an individual mask are then reset to
    /// the mean.
    pub fn ask_conditional(&mut self, masks: &[BinaryMask]) -> Result<Vec<DVector<f64>>> {
        self.check_sampleable()?;
        for m in masks {
            if m.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: m.len(),
                });
            }
        }
        let factor = self.conditional_factor(&active_union(masks, self.dim()))?;
        Ok(masks.iter().map(|m| self.draw(&factor, Some(m))).collect())
    }

    /// Factor of the covariance of the coordinates in `union` conditioned on
    /// the others staying at the mean. Also returns the Schur term that is
    /// added back after an update.
    fn conditional_parts(&self, union: &[bool]) -> Result<(Factor, Option<DMatrix<f64>>)> {
        let u: Vec<usize> = (0..self.dim()).filter(|&j| union[j]).collect();
        let r: Vec<usize> = (0..self.dim()).filter(|&j| !union[j]).collect();
        if r.is_empty() {
            return Ok((self.factor.clone(), None));
        }
        if u.is_empty() {
            return Ok((
                Factor {
                    index: Vec::new(),
                    basis: DMatrix::zeros(0, 0),
                    scales: DVector::zeros(0),
                },
                None,
            ));
        }
        let c_uu = self.cov.select_rows(&u).select_columns(&u);
        let c_ur = self.cov.select_rows(&u).select_columns(&r);
        let c_rr = self.cov.select_rows(&r).select_columns(&r);
        let chol = c_rr
            .cholesky()
            .ok_or_else(|| Error::DegenerateCovariance("inactive block not positive definite".into()))?;
        let mut schur = &c_ur * chol.solve(&c_ur.transpose());
        symmetrize(&mut schur);
        let mut cond = c_uu - &schur;
        symmetrize(&mut cond);
        Ok((Factor::of(cond, u)?, Some(schur)))
    }

    fn conditional_factor(&self, union: &[bool]) -> Result<Factor> {
        self.conditional_parts(union).map(|(f, _)| f)
    }

    /// Standard update from `(point, objective)` pairs of one population.
    pub fn tell(&mut self, evaluated: &[(DVector<f64>, f64)]) -> Result<()> {
        self.check_population(evaluated.len())?;
        let mut order: Vec<usize> = (0..evaluated.len()).collect();
        order.sort_by(|&a, &b| evaluated[a].1.total_cmp(&evaluated[b].1));
        let ranked: Vec<&DVector<f64>> = order.iter().map(|&i| &evaluated[i].0).collect();
        self.update(&ranked, None)
    }

    /// Conditional update: `ranked` points best first, each with its mask.
    /// Inactive coordinates contribute nothing for that sample.
    pub fn tell_masked(&mut self, ranked: &[(&DVector<f64>, &BinaryMask)]) -> Result<()> {
        self.check_population(ranked.len())?;
        let points: Vec<&DVector<f64>> = ranked.iter().map(|(p, _)| *p).collect();
        let masks: Vec<&BinaryMask> = ranked.iter().map(|(_, m)| *m).collect();
        self.update(&points, Some(&masks))
    }

    fn check_population(&self, got: usize) -> Result<()> {
        if got != self.params.lambda {
            return Err(Error::RankSizeMismatch {
                expected: self.params.lambda,
                got,
            });
        }
        Ok(())
    }

    fn update(&mut self, ranked: &[&DVector<f64>], masks: Option<&[&BinaryMask]>) -> Result<()> {
        let n = self.dim();
        let p = self.params.clone();

        let union: Vec<bool> = match masks {
            Some(ms) => {
                let owned: Vec<BinaryMask> = ms.iter().map(|m| (*m).clone()).collect();
                active_union(&owned, n)
            }
            None => vec![true; n],
        };
        let (factor, schur) = self.conditional_parts(&union)?;

        let steps: Vec<DVector<f64>> = ranked
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mut y = (*x - &self.mean) / self.sigma;
                if let Some(ms) = masks {
                    for j in 0..n {
                        if !ms[i].get(j) {
                            y[j] = 0.0;
                        }
                    }
                }
                y
            })
            .collect();

        let mut y_w = DVector::zeros(n);
        for (w, y) in p.weights.iter().zip(&steps) {
            y_w.axpy(*w, y, 1.0);
        }

        // Effective dimension: how many coordinates a sample actually moves.
        let n_eff = match masks {
            Some(ms) => {
                (ms.iter().map(|m| m.active_count()).sum::<usize>() as f64 / ms.len() as f64).max(1.0)
            }
            None => n as f64,
        };

        // Step-size path.
        let y_w_u = DVector::from_iterator(factor.index.len(), factor.index.iter().map(|&j| y_w[j]));
        let white_u = if factor.index.is_empty() {
            DVector::zeros(0)
        } else {
            factor.whiten(&y_w_u)
        };
        let mut white = DVector::zeros(n);
        for (k, &j) in factor.index.iter().enumerate() {
            white[j] = white_u[k];
        }
        let cs = p.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - cs) + white * (cs * (2.0 - cs) * p.mu_eff).sqrt();

        let chi = expected_norm(n_eff);
        let ps_norm = self.p_sigma.norm();
        let g = (self.generation + 1) as f64;
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * g)).sqrt() < (1.4 + 2.0 / (n_eff + 1.0)) * chi;
        let h = if h_sigma { 1.0 } else { 0.0 };

        // Covariance path, only on coordinates that moved.
        let cc = p.c_c;
        let pc_gain = h * (cc * (2.0 - cc) * p.mu_eff).sqrt();
        for j in 0..n {
            if union[j] {
                self.p_c[j] = (1.0 - cc) * self.p_c[j] + pc_gain * y_w[j];
            }
        }

        // Covariance: decay plus rank-one plus rank-mu, on the active block.
        let idx = &factor.index;
        let m = idx.len();
        if m > 0 {
            let decay = 1.0 - p.c1 - p.c_mu + (1.0 - h) * p.c1 * cc * (2.0 - cc);
            let pc_u = DVector::from_iterator(m, idx.iter().map(|&j| self.p_c[j]));
            let base = match &schur {
                Some(s) => self.cov.select_rows(idx).select_columns(idx) - s,
                None => self.cov.clone(),
            };
            let mut next = base * decay;
            next.ger(p.c1, &pc_u, &pc_u, 1.0);
            for (w, y) in p.weights.iter().zip(&steps) {
                let y_u = DVector::from_iterator(m, idx.iter().map(|&j| y[j]));
                next.ger(p.c_mu * w, &y_u, &y_u, 1.0);
            }
            if let Some(s) = &schur {
                next += s;
            }
            symmetrize(&mut next);
            if schur.is_some() {
                for (a, &ja) in idx.iter().enumerate() {
                    for (b, &jb) in idx.iter().enumerate() {
                        self.cov[(ja, jb)] = next[(a, b)];
                    }
                }
            } else {
                self.cov = next;
            }
        }

        // Mean; coordinates outside the union have zero step.
        self.mean.axpy(self.sigma, &y_w, 1.0);
        self.mean.apply(|v| *v = v.clamp(self.lower, self.upper));

        let exponent = ((cs / p.d_sigma) * (ps_norm / chi - 1.0)).min(1.0);
        self.sigma *= exponent.exp();

        self.generation += 1;
        self.factor = Factor::of(self.cov.clone(), (0..n).collect())?;
        self.check_sampleable()
    }
}

fn active_union(masks: &[BinaryMask], n: usize) -> Vec<bool> {
    let mut union = vec![false; n];
    for m in masks {
        for j in m.active_indices() {
            union[j] = true;
        }
    }
    union
}

pub fn cma_ask(state: &mut CmaState, count: usize) -> Result<Vec<DVector<f64>>> {
    state.ask(count)
}

pub fn cma_tell(state: &mut CmaState, evaluated: &[(DVector<f64>, f64)]) -> Result<()> {
    state.tell(evaluated)
}

/// Plain CMA-ES on the scaling weights with every layer selected.
#[derive(Debug, Clone)]
pub struct CmaStrategy {
    state: StrategyState,
    space: MixedSpace,
    cma: CmaState,
    pending: Option<Vec<Candidate>>,
}

impl CmaStrategy {
    pub fn new(space: MixedSpace, seed: u64) -> Result<Self> {
        Ok(Self {
            state: StrategyState::new(CMA, seed),
            space,
            cma: CmaState::for_space(&space, None, seed)?,
            pending: None,
        })
    }

    pub fn cma(&self) -> &CmaState {
        &self.cma
    }
}

impl Strategy for CmaStrategy {
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
        let points = self.cma.ask(lambda)?;
        let pop: Vec<Candidate> = points
            .into_iter()
            .map(|x| {
                Candidate::new(BinaryMask::ones(self.space.m()), ScalingVector::new(x.as_slice().to_vec()))
                    .with_origin(Origin {
                        seed: self.state.rng_seed,
                        iteration: self.state.iteration,
                        strategy_id: CMA.into(),
                    })
            })
            .collect();
        self.pending = Some(pop.clone());
        Ok(pop)
    }

    fn tell(&mut self, evaluated: &[(Candidate, EvalResult)]) -> Result<()> {
        if evaluated.len() != self.cma.population_size() {
            return Err(Error::RankSizeMismatch {
                expected: self.cma.population_size(),
                got: evaluated.len(),
            });
        }
        let order = rank_order(evaluated);
        let ranked: Vec<(DVector<f64>, f64)> = order
            .iter()
            .map(|&i| {
                (
                    DVector::from_column_slice(evaluated[i].0.x.values()),
                    evaluated[i].1.objective,
                )
            })
            .collect();
        self.cma.tell(&ranked)?;
        self.state.record(evaluated);
        self.state.iteration += 1;
        self.pending = None;
        Ok(())
    }
}
