//! Sequential versus rayon-parallel execution of the same workloads.
//!
//! `workers = 1` always takes the sequential path. With the `parallel`
//! feature disabled the multi-worker runs fall back to it as well, so
//! `cargo bench --no-default-features` gives the baseline for both labels.

use std::hint::black_box;
use std::path::PathBuf;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ihes::analysis::{compare_variants, CompareConfig};
use ihes::formulation::{build, Variant};
use ihes::global::{solve_global, GlobalConfig};
use ihes::network::NetworkModel;
use ihes::par::par_map;
use ihes::qp::{solve_qp, QpConfig};

#[path = "../tests/common/random_qp.rs"]
mod random_qp;

const PARALLEL_WORKERS: usize = 4;

fn modes() -> [(&'static str, usize); 2] {
    [("sequential", 1), ("parallel", PARALLEL_WORKERS)]
}

fn load(name: &str) -> NetworkModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name);
    ihes::network::load(&path).expect("bundled instance")
}

fn random_batch(c: &mut Criterion) {
    let problems: Vec<_> = (0..16).map(|s| random_qp::random_qp(s, 120)).collect();
    let mut g = c.benchmark_group("random_qp_batch");
    for (label, workers) in modes() {
        g.bench_function(BenchmarkId::new(label, workers), |b| {
            b.iter(|| par_map(&problems, workers, |p| solve_qp(black_box(p), &QpConfig::default()).map(|s| s.objective)))
        });
    }
    g.finish();
}

fn hour_blocks(c: &mut Criterion) {
    let model = load("small8.json");
    let hours: Vec<usize> = (1..=model.horizon_hours).collect();
    let inst = build(&model, Variant::McCormick, &hours).unwrap();
    let mut g = c.benchmark_group("mccormick_hour_blocks");
    for (label, workers) in modes() {
        let cfg = QpConfig { workers, ..QpConfig::default() };
        g.bench_function(BenchmarkId::new(label, workers), |b| b.iter(|| solve_qp(black_box(&inst.qp), &cfg).unwrap().objective));
    }
    g.finish();
}

fn global_hours(c: &mut Criterion) {
    let model = load("small8.json");
    let hours: Vec<usize> = (1..=model.horizon_hours).collect();
    let inst = build(&model, Variant::Reformulated, &hours).unwrap();
    let mut g = c.benchmark_group("global_small8");
    for (label, workers) in modes() {
        let cfg = GlobalConfig { workers, ..GlobalConfig::default() };
        g.bench_function(BenchmarkId::new(label, workers), |b| b.iter(|| solve_global(black_box(&inst), &cfg).unwrap().objective));
    }
    g.finish();
}

fn comparison(c: &mut Criterion) {
    let model = load("micro3.json");
    let hours: Vec<usize> = (1..=model.horizon_hours).collect();
    let mut g = c.benchmark_group("compare_micro3");
    g.sample_size(10);
    for (label, workers) in modes() {
        let mut cfg = CompareConfig { workers, ..CompareConfig::default() };
        cfg.global.workers = workers;
        cfg.qp.workers = workers;
        g.bench_function(BenchmarkId::new(label, workers), |b| {
            b.iter(|| compare_variants(black_box(&model), "micro3", &hours, &cfg).unwrap().rows.len())
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(5)).warm_up_time(Duration::from_secs(1));
    targets = random_batch, hour_blocks, global_hours, comparison
}
criterion_main!(benches);
