use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fedsim_bench::{initial_state, toy_federation, toy_optimizer};
use fedsim_core::algorithms::{run_round_fedsub, run_round_scaffold, run_round_ssf, Algorithm};
use fedsim_core::problem::{full_local_gradient, stochastic_gradient};
use fedsim_core::rng::minibatch_stream;
use fedsim_core::{DMatrix, Projector};

fn gradients(c: &mut Criterion) {
    let fed = toy_federation(0.5);
    let ds = &fed.clients()[0];
    let x = DMatrix::from_element(fed.feature_dim(), fed.output_dim(), 0.1);
    c.bench_function("full_gradient", |b| {
        b.iter(|| full_local_gradient(ds, black_box(&x), 0.1).unwrap())
    });
    let mut rng = minibatch_stream(0, 0, 0);
    c.bench_function("minibatch_gradient_b20", |b| {
        b.iter(|| stochastic_gradient(ds, black_box(&x), 0.1, 20, &mut rng).unwrap())
    });
}

fn projectors(c: &mut Criterion) {
    let mut group = c.benchmark_group("projector_generate");
    for r in [1, 20, 50] {
        let mut round = 0;
        group.bench_with_input(BenchmarkId::from_parameter(r), &r, |b, &r| {
            b.iter(|| {
                round += 1;
                Projector::generate(100, r, 0, round).unwrap()
            })
        });
    }
    group.finish();
}

fn rounds(c: &mut Criterion) {
    let fed = toy_federation(2.0);
    let mut group = c.benchmark_group("round");
    let scaffold = toy_optimizer(Algorithm::Scaffold, 100);
    let (model, controls) = initial_state(&fed, &scaffold);
    group.bench_function("scaffold", |b| {
        b.iter(|| run_round_scaffold(&model, &controls, &fed, &scaffold, 0).unwrap())
    });
    for r in [20, 50] {
        let ssf = toy_optimizer(Algorithm::Ssf, r);
        let (model, controls) = initial_state(&fed, &ssf);
        group.bench_with_input(BenchmarkId::new("ssf", r), &r, |b, _| {
            b.iter(|| run_round_ssf(&model, &controls, &fed, &ssf, 0).unwrap())
        });
        let fedsub = toy_optimizer(Algorithm::FedSub, r);
        let (model, controls) = initial_state(&fed, &fedsub);
        group.bench_with_input(BenchmarkId::new("fedsub", r), &r, |b, _| {
            b.iter(|| run_round_fedsub(&model, &controls, &fed, &fedsub, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gradients, projectors, rounds);
criterion_main!(benches);
