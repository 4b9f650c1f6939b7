//! Sequential against parallel execution: a small sweep and a wide likelihood batch.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hit_core::behavior::{sequence_likelihood, BehaviorParams, GoalSpec, Vector};
use hit_core::config::ScenarioConfig;
use hit_core::par::{self, Execution};
use hit_core::sweep::{run_sweep, SweepSpec};
use hit_core::tree::IntentionId;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn sweep(c: &mut Criterion) {
    let config = ScenarioConfig::default();
    let mut spec = SweepSpec::full(4);
    spec.scripts = vec!["nominal".into(), "guided_recovery".into()];
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| run_sweep(&config, &spec, mode).unwrap())
        });
    }
    group.finish();
}

fn likelihoods(c: &mut Criterion) {
    let params = BehaviorParams::default();
    let start = Vector::from_column_slice(&[0.0, 0.0]);
    let obs = vec![Vector::from_column_slice(&[0.01, 0.015])];
    let mut group = c.benchmark_group("goal_likelihoods");
    for n in [16usize, 256, 4096] {
        let goals: Vec<GoalSpec> = (0..n)
            .map(|i| {
                let a = i as f64 * 0.37;
                let mean = Vector::from_column_slice(&[0.5 * a.cos(), 0.5 * a.sin()]);
                GoalSpec::fixed(IntentionId(i), mean, params.goal_var)
            })
            .collect();
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &goals, |b, goals| {
                b.iter(|| {
                    par::map(goals, mode, |g| {
                        sequence_likelihood(black_box(&start), &obs, g, 0.5, &params).unwrap()
                    })
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, sweep, likelihoods);
criterion_main!(benches);
