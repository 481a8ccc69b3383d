//! Engine benchmarks. Run with the default features for the rayon path
//! and with `--no-default-features` for the sequential fallback; group
//! names carry the active mode so reports from both runs line up.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use inform::exact::{self, ExactOptions, Query};
use inform::model::builtin_models;
use inform::par::effective_workers;
use inform::semantics::build_markov_chain;
use inform::stat::{estimate_probability, SamplingPlan};

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

fn bench_chain_build(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("chain_build/{}", mode()));
    for pop in [10u32, 20, 40] {
        let m = builtin_models().remove("sir").unwrap().with_population(pop);
        let init = vec![pop - 1, 1, 0];
        group.bench_with_input(BenchmarkId::from_parameter(pop), &pop, |b, _| {
            b.iter(|| build_markov_chain(&m, &init, 1_000_000).unwrap())
        });
    }
    group.finish();
}

fn bench_exact_eoe(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("exact_eoe/{}", mode()));
    for pop in [10u32, 20] {
        let m = builtin_models().remove("sir").unwrap().with_population(pop);
        let init = vec![pop - 1, 1, 0];
        group.bench_with_input(BenchmarkId::from_parameter(pop), &pop, |b, _| {
            b.iter(|| exact::evaluate(&m, &init, &Query::Eoe, &ExactOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_sampling(c: &mut Criterion) {
    let m = builtin_models().remove("sir").unwrap().with_population(50);
    let init = vec![49u32, 1, 0];
    let query = Query::Reach {
        target: vec![0, 0, 50],
    };
    let mut group = c.benchmark_group(format!("sampling/{}", mode()));
    group.sample_size(10);
    // wide interval keeps the fixed sample count bench-sized
    let base = SamplingPlan {
        delta: 0.05,
        width: 0.2,
        seed: 17,
        ..SamplingPlan::default()
    };
    let configs = [("one_worker", Some(1)), ("all_workers", None)];
    for (label, workers) in configs {
        let plan = SamplingPlan { workers, ..base };
        group.bench_function(label, |b| {
            b.iter(|| estimate_probability(&m, &init, &query, &plan).unwrap())
        });
    }
    eprintln!("effective workers in this build: {}", effective_workers());
    group.finish();
}

criterion_group!(benches, bench_chain_build, bench_exact_eoe, bench_sampling);
criterion_main!(benches);
