//! Parameter-space merging by linear interpolation of two weight vectors.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::space::EvalResult;

/// Coefficient used by the PS-merging condition.
pub const PS_ALPHA: f64 = 0.5;

pub trait ParameterLoss: Send + Sync + fmt::Debug {
    fn loss(&self, theta: &[f64]) -> f64;

    /// Upper bound used to derive a score, if one is known.
    fn loss_max(&self) -> Option<f64> {
        None
    }
}

/// `sum_k h_k (theta_k - c_k)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    pub center: Vec<f64>,
    pub curvature: Vec<f64>,
}

impl ParameterLoss for QuadraticLoss {
    fn loss(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.center)
            .zip(&self.curvature)
            .map(|((t, c), h)| h * (t - c) * (t - c))
            .sum()
    }
}

#[derive(Debug)]
pub struct PSMergeObjective {
    theta_a: Vec<f64>,
    theta_b: Vec<f64>,
    loss: Box<dyn ParameterLoss>,
    evaluations: AtomicU64,
}

impl PSMergeObjective {
    pub fn new(theta_a: Vec<f64>, theta_b: Vec<f64>, loss: Box<dyn ParameterLoss>) -> Result<Self> {
        if theta_a.len() != theta_b.len() {
            return Err(Error::DimensionMismatch {
                expected: theta_a.len(),
                got: theta_b.len(),
            });
        }
        Ok(Self {
            theta_a,
            theta_b,
            loss,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::SeqCst)
    }

    /// `(1 - alpha) * theta_a + alpha * theta_b`.
    pub fn merged(&self, alpha: f64) -> Vec<f64> {
        self.theta_a
            .iter()
            .zip(&self.theta_b)
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect()
    }

    /// Loss of the interpolated parameters. Consumes one evaluation.
    pub fn ps_merge_eval(&self, alpha: f64) -> Result<EvalResult> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::OutOfRange(format!("alpha {alpha} outside [0, 1]")));
        }
        self.evaluations.fetch_add(1, Ordering::SeqCst);
        let objective = self.loss.loss(&self.merged(alpha));
        let result = EvalResult::new(objective);
        Ok(match self.loss.loss_max() {
            Some(max) => result.scored_against(max),
            None => result,
        })
    }
}

pub fn ps_merge_eval(obj: &PSMergeObjective, alpha: f64) -> Result<EvalResult> {
    obj.ps_merge_eval(alpha)
}
