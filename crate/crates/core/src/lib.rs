//! Mixed binary-continuous black-box optimization for layer-merging search.
//!
//! The search space pairs a layer-selection mask `z` with per-layer scaling
//! weights `x`; a weight only matters when its layer is selected. The crate
//! provides synthetic objectives with that property, random-sampling
//! baselines, CMA-ES, a joint mask/scaling optimizer that exploits it, and an
//! experiment harness that compares them under shared seeds.

// `RunFailure` carries the partial log on purpose.
#![allow(clippy::result_large_err)]

pub mod error;
pub mod exec;
pub mod fixture;
pub mod harness;
pub mod objectives;
pub mod rng;
pub mod run;
pub mod space;
pub mod strategies;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use objectives::{Objective, ObjectiveHandle};
pub use run::{run, RunFailure, RunLog, RunRecord};
pub use space::{active_count, effective_reduction, make_space, BinaryMask, Candidate, EvalResult, MixedSpace, ScalingVector};
pub use strategies::{build_strategy, Strategy};
