//! Sequential vs parallel population evaluation and full runs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mergeopt::objectives::make_teacher_instance;
use mergeopt::run::evaluate_population;
use mergeopt::strategies::STRUCTURED;
use mergeopt::{run, Candidate, ExecMode, ObjectiveHandle};
use rand::{Rng, SeedableRng};

fn modes() -> Vec<(&'static str, ExecMode)> {
    vec![
        ("sequential", ExecMode::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", ExecMode::Parallel),
    ]
}

fn population(handle: &ObjectiveHandle, size: usize) -> Vec<Candidate> {
    let m = handle.space().m();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    (0..size)
        .map(|_| {
            let z = (0..m).map(|_| rng.random::<bool>()).collect();
            let x = (0..m).map(|_| rng.random_range(0.0..=2.0)).collect();
            Candidate::new(mergeopt::BinaryMask::new(z), mergeopt::ScalingVector::new(x))
        })
        .collect()
}

fn bench_population(c: &mut Criterion) {
    let handle = ObjectiveHandle::new(make_teacher_instance(1, 96, 8, 64).unwrap());
    let pop = population(&handle, 64);
    let mut group = c.benchmark_group("evaluate_population");
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| evaluate_population(&handle, &pop, mode))
        });
    }
    group.finish();
}

fn bench_run(c: &mut Criterion) {
    let handle = ObjectiveHandle::new(make_teacher_instance(2, 16, 4, 16).unwrap());
    let mut group = c.benchmark_group("structured_run_320");
    group.sample_size(20);
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| run(STRUCTURED, &handle, 320, 0, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_population, bench_run);
criterion_main!(benches);
