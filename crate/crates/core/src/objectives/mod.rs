//! Black-box objectives over a [`MixedSpace`].
//!
//! Every objective here honors the conditional dependency between the two
//! variable blocks: when `z[j] == 0` the value of `x[j]` cannot influence the
//! result.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::space::{BinaryMask, Candidate, EvalResult, MixedSpace, ScalingVector};

pub mod external;
pub mod masked_sphere;
pub mod ps_merge;
pub mod toy_merge;

pub use external::ExternalObjective;
pub use masked_sphere::MaskedSphere;
pub use ps_merge::{PSMergeObjective, ParameterLoss, QuadraticLoss};
pub use toy_merge::{make_teacher_instance, ToyMergeObjective};

/// Whether an objective tolerates concurrent `evaluate_point` calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    Serial,
}

pub trait Objective: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;

    fn space(&self) -> &MixedSpace;

    /// Evaluates `(z, x)`. Callers guarantee matching dimensions.
    fn evaluate_point(&self, z: &BinaryMask, x: &ScalingVector) -> Result<EvalResult>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }

    /// Hash of the serialized instance, when the objective has one.
    fn fixture_hash(&self) -> Option<String> {
        None
    }
}

/// Shared objective plus an evaluation counter.
///
/// The counter is atomic, so a handle can be evaluated from several threads
/// when the objective is [`Concurrency::Concurrent`].
#[derive(Debug)]
pub struct ObjectiveHandle {
    inner: Arc<dyn Objective>,
    evaluations: AtomicU64,
}

impl ObjectiveHandle {
    pub fn new(objective: impl Objective + 'static) -> Self {
        Self::from_arc(Arc::new(objective))
    }

    pub fn from_arc(inner: Arc<dyn Objective>) -> Self {
        Self {
            inner,
            evaluations: AtomicU64::new(0),
        }
    }

    pub fn id(&self) -> &str {
        self.inner.id()
    }

    pub fn space(&self) -> &MixedSpace {
        self.inner.space()
    }

    pub fn concurrency(&self) -> Concurrency {
        self.inner.concurrency()
    }

    pub fn fixture_hash(&self) -> Option<String> {
        self.inner.fixture_hash()
    }

    pub fn objective(&self) -> &Arc<dyn Objective> {
        &self.inner
    }

    /// Number of evaluations performed through this handle.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::SeqCst)
    }

    pub fn evaluate(&self, c: &Candidate) -> Result<EvalResult> {
        self.inner.space().check_dims(&c.z, &c.x)?;
        self.evaluations.fetch_add(1, Ordering::SeqCst);
        let result = self.inner.evaluate_point(&c.z, &c.x)?;
        if !result.objective.is_finite() {
            return Err(Error::EvaluatorFailure(format!(
                "objective `{}` returned non-finite value {}",
                self.inner.id(),
                result.objective
            )));
        }
        Ok(result)
    }
}

pub fn evaluate(objective: &ObjectiveHandle, c: &Candidate) -> Result<EvalResult> {
    objective.evaluate(c)
}
