//! Eval-mode forward cost: one worker vs the full rayon pool, and NBM vs
//! grouped NAM vs per-feature-loop NAM on forest-cover-shaped input.
//!
//! Build with `--no-default-features` to time the sequential fallback.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nbm::data::synth::covertype_like;
use nbm::models::nam::nam_forward_naive;
use nbm::models::{Architecture, Model, ModelKind};
use nbm::par::{num_threads, with_threads};
use nbm::seeded_rng;

const BATCH: usize = 1024;

fn model(kind: ModelKind) -> Model {
    Model::new(&Architecture::new(kind, 54, 7), &mut seeded_rng(0)).unwrap()
}

fn threads(c: &mut Criterion) {
    let x = covertype_like(BATCH, 1).unwrap().x;
    let mut group = c.benchmark_group("threads");
    group.sample_size(10);
    for kind in [ModelKind::Nbm, ModelKind::Nam] {
        let m = model(kind);
        for (label, n) in [("one", 1), ("pool", 0)] {
            group.bench_with_input(BenchmarkId::new(kind.name(), label), &n, |b, &n| {
                b.iter(|| with_threads(n, || m.predict(black_box(&x)).unwrap()))
            });
        }
    }
    group.finish();
    eprintln!("pool size: {}", num_threads());
}

fn variants(c: &mut Criterion) {
    let x = covertype_like(BATCH, 2).unwrap().x;
    let nbm = model(ModelKind::Nbm);
    let nam = model(ModelKind::Nam);
    let Model::Nam(nam_params) = &nam else { unreachable!() };
    let mut group = c.benchmark_group("variants");
    group.sample_size(10);
    group.bench_function("nbm", |b| b.iter(|| nbm.predict(black_box(&x)).unwrap()));
    group.bench_function("nam_grouped", |b| b.iter(|| nam.predict(black_box(&x)).unwrap()));
    group.bench_function("nam_naive", |b| {
        b.iter(|| nam_forward_naive(black_box(&x), nam_params).unwrap())
    });
    group.finish();
}

criterion_group!(benches, threads, variants);
criterion_main!(benches);
