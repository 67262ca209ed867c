//! Compares multi-trial throughput of the worker-pool path against the
//! single-threaded reference path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use slowstream::config::ExperimentConfig;
use slowstream::harness::{run_trials, run_trials_sequential};

fn bench_config(trials: usize) -> ExperimentConfig {
    ExperimentConfig { trials, budget: 60, patience: 30, ..ExperimentConfig::default() }
}

fn trial_batches(c: &mut Criterion) {
    let mut group = c.benchmark_group("trial_batch");
    group.sample_size(10);
    for trials in [4, 8] {
        let config = bench_config(trials);
        group.bench_with_input(
            BenchmarkId::new("sequential", trials),
            &config,
            |b, config| b.iter(|| run_trials_sequential(config, 0).unwrap()),
        );
        group.bench_with_input(
            BenchmarkId::new("dispatched", trials),
            &config,
            |b, config| b.iter(|| run_trials(config, 0).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, trial_batches);
criterion_main!(benches);
