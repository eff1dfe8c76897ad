use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use mvsde_bench::{double_well, ensemble, increments};
use mvsde_core::metrics::{sliced_w1, w1_1d};
use mvsde_core::model::{Kernel, VectorMap};
use mvsde_core::schemes::{backward_em_step, explicit_em_step, tamed_em_step};
use mvsde_core::{SchemeConfig, SchemeKind};

fn interaction(c: &mut Criterion) {
    let mut g = c.benchmark_group("interaction_conv");
    for n in [256usize, 1024, 4096] {
        let fast = double_well(0.05);
        let mut naive = fast.clone();
        let k = 0.05;
        let map: VectorMap = Arc::new(move |z: &[f64], out: &mut [f64]| {
            for (o, zi) in out.iter_mut().zip(z) {
                *o = -k * zi;
            }
        });
        naive.b0 = Kernel::general(map);
        let ens = ensemble(n, 1);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("linear", n), &n, |b, _| {
            b.iter(|| {
                for i in 0..ens.len() {
                    black_box(fast.interaction_conv(ens.particle(i), &ens).unwrap());
                }
            })
        });
        if n <= 1024 {
            g.bench_with_input(BenchmarkId::new("pairwise", n), &n, |b, _| {
                b.iter(|| {
                    for i in 0..ens.len() {
                        black_box(naive.interaction_conv(ens.particle(i), &ens).unwrap());
                    }
                })
            });
        }
    }
    g.finish();
}

fn steps(c: &mut Criterion) {
    let model = double_well(0.05);
    let n = 4096;
    let ens = ensemble(n, 2);
    let dw = increments(n, 0.01, 3);
    let mut g = c.benchmark_group("step");
    g.throughput(Throughput::Elements(n as u64));
    let cfg = SchemeConfig::new(SchemeKind::Explicit, 0.01, 1.0);
    g.bench_function("explicit", |b| b.iter(|| black_box(explicit_em_step(&ens, &model, &cfg, &dw, None).unwrap())));
    let cfg = SchemeConfig::new(SchemeKind::Tamed, 0.01, 1.0);
    g.bench_function("tamed", |b| b.iter(|| black_box(tamed_em_step(&ens, &model, &cfg, &dw).unwrap())));
    let cfg = SchemeConfig::new(SchemeKind::Backward, 0.01, 1.0);
    g.bench_function("backward", |b| b.iter(|| black_box(backward_em_step(&ens, &model, &cfg, &dw).unwrap())));
    g.finish();
}

fn wasserstein(c: &mut Criterion) {
    let mut g = c.benchmark_group("w1");
    for n in [1_000usize, 100_000] {
        let a = ensemble(n, 4).into_positions();
        let b = ensemble(n, 5).into_positions();
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("exact_1d", n), &n, |bch, _| bch.iter(|| black_box(w1_1d(&a, &b).unwrap())));
    }
    let a = ensemble(2_000, 6).into_positions();
    let b = ensemble(2_000, 7).into_positions();
    g.bench_function("sliced_2d_64", |bch| bch.iter(|| black_box(sliced_w1(&a[..2_000], &b[..2_000], 2, 64, 0).unwrap())));
    g.finish();
}

criterion_group!(benches, interaction, steps, wasserstein);
criterion_main!(benches);
