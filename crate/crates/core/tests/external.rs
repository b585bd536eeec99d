//! The JSON-lines evaluator client against a small Python evaluator.

use std::path::PathBuf;

use mergeopt::objectives::{ExternalObjective, Objective};
use mergeopt::strategies::{CONDITIONAL_CMA, STRUCTURED, UNSTRUCTURED};
use mergeopt::{run, BinaryMask, Error, ExecMode, MixedSpace, ObjectiveHandle, ScalingVector};
use rand::{Rng, SeedableRng};

fn evaluator(extra: &[&str]) -> Vec<String> {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/echo_evaluator.py");
    let mut argv = vec!["python3".to_owned(), script.display().to_string()];
    argv.extend(extra.iter().map(|s| s.to_string()));
    argv
}

fn space() -> MixedSpace {
    MixedSpace::with_default_bounds(2, 4).unwrap()
}

fn spawn(extra: &[&str]) -> mergeopt::Result<ExternalObjective> {
    ExternalObjective::spawn(&evaluator(extra), space(), "echo")
}

/// What the evaluator computes, written out here independently.
fn mean_active(z: &[bool], x: &[f64]) -> f64 {
    let active: Vec<f64> = z.iter().zip(x).filter(|(on, _)| **on).map(|(_, v)| *v).collect();
    if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    }
}

#[test]
fn hundreds_of_requests_round_trip_exactly() {
    let obj = spawn(&["--space", "2,4"]).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    for _ in 0..250 {
        let z: Vec<bool> = (0..8).map(|_| rng.random()).collect();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..=2.0)).collect();
        let r = obj
            .evaluate_point(&BinaryMask::new(z.clone()), &ScalingVector::new(x.clone()))
            .unwrap();
        let want = mean_active(&z, &x);
        assert_eq!(r.objective.to_bits(), want.to_bits());
        assert_eq!(r.score, Some((1.0 - want / 2.0).clamp(0.0, 1.0)));
    }
}

#[test]
fn handshake_without_space_is_accepted() {
    assert!(spawn(&[]).is_ok());
}

#[test]
fn protocol_or_space_mismatch_is_a_configuration_error() {
    assert!(matches!(spawn(&["--protocol", "other/2"]), Err(Error::Config(_))));
    assert!(matches!(spawn(&["--space", "3,4"]), Err(Error::Config(_))));
    let missing = ExternalObjective::spawn(&["/nonexistent/evaluator".to_owned()], space(), "echo");
    assert!(matches!(missing, Err(Error::Config(_))));
}

fn failing_run(extra: &[&str], k: usize) {
    let handle = ObjectiveHandle::new(spawn(extra).unwrap());
    let failure = run(UNSTRUCTURED, &handle, 50, 0, ExecMode::Sequential).unwrap_err();
    assert!(matches!(failure.error, Error::EvaluatorFailure(_)), "{extra:?}: {:?}", failure.error);
    assert_eq!(failure.log.records.len(), k, "{extra:?}");
    assert!(failure.log.header.error.is_some());
}

#[test]
fn evaluator_failures_stop_the_run_and_keep_the_partial_log() {
    failing_run(&["--space", "2,4", "--error-after", "7"], 7);
    failing_run(&["--space", "2,4", "--crash-after", "3"], 3);
    failing_run(&["--space", "2,4", "--wrong-id-after", "11"], 11);
}

#[test]
fn inactive_weights_never_change_the_answer() {
    let obj = spawn(&["--space", "2,4"]).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let z: Vec<bool> = (0..8).map(|_| rng.random()).collect();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..=2.0)).collect();
        let x2: Vec<f64> = z
            .iter()
            .zip(&x)
            .map(|(&on, &v)| if on { v } else { rng.random_range(0.0..=2.0) })
            .collect();
        let z = BinaryMask::new(z);
        let a = obj.evaluate_point(&z, &ScalingVector::new(x)).unwrap();
        let b = obj.evaluate_point(&z, &ScalingVector::new(x2)).unwrap();
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.score.map(f64::to_bits), b.score.map(f64::to_bits));
    }
}

#[test]
fn full_runs_through_the_client_are_deterministic() {
    for strategy in [STRUCTURED, CONDITIONAL_CMA] {
        let logs: Vec<String> = (0..2)
            .map(|_| {
                let handle = ObjectiveHandle::new(spawn(&["--space", "2,4"]).unwrap());
                run(strategy, &handle, 60, 5, ExecMode::default()).unwrap().to_jsonl()
            })
            .collect();
        assert_eq!(logs[0], logs[1], "{strategy}");
        assert_eq!(logs[0].lines().count(), 60);
    }
}
