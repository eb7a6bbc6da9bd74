use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pricer_core::{
    choice_probabilities, full_gradient, generate_synthetic, potential, run, sampled_oracle,
    Algorithm, DynamicsConfig, GeneratorParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_market() -> pricer_core::MarketInstance {
    generate_synthetic(17, &GeneratorParams::new(5, 10, 20, 5, 1e-4)).unwrap()
}

fn oracle_benches(c: &mut Criterion) {
    let inst = small_market();
    let p = inst.p0.as_slice().to_vec();

    c.bench_function("potential", |b| {
        b.iter(|| potential(&inst, black_box(&p)).unwrap())
    });
    c.bench_function("full_gradient", |b| {
        b.iter(|| full_gradient(&inst, black_box(&p)).unwrap())
    });
    c.bench_function("choice_probabilities", |b| {
        b.iter(|| choice_probabilities(&inst, 0, black_box(&p)).unwrap())
    });
    c.bench_function("sampled_oracle_consumer", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = inst.num_suppliers();
        b.iter(|| sampled_oracle(&inst, agent, black_box(&p), &mut rng).unwrap())
    });
}

fn dynamics_benches(c: &mut Criterion) {
    let inst = small_market();
    let mut group = c.benchmark_group("dynamics_1k_iters");
    for algorithm in [Algorithm::Sgd, Algorithm::Adagrad] {
        group.bench_function(algorithm.name(), |b| {
            b.iter(|| {
                let cfg = DynamicsConfig {
                    algorithm,
                    iterations: 1000,
                    stride: Some(100),
                    ..Default::default()
                };
                run(&inst, &cfg).unwrap()
            })
        });
    }
    group.bench_function("gd_50_iters", |b| {
        b.iter(|| {
            let cfg = DynamicsConfig {
                algorithm: Algorithm::Gd,
                iterations: 50,
                stride: Some(10),
                ..Default::default()
            };
            run(&inst, &cfg).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, oracle_benches, dynamics_benches);
criterion_main!(benches);
