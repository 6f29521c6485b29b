//! Row-parallel kernels on one thread vs. the full rayon pool.
//!
//! Build with `--no-default-features` to time the plain-loop fallback; the
//! "threads=1" rows then match it closely.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;

use vvs_core::closeup::{closeup_fused, CloseupParams};
use vvs_core::flow::{pyramidal_flow, warp_backward, FlowParams};
use vvs_core::synth::{shifted_pair, MovingSquare};
use vvs_core::synthesis::synthesize_view;
use vvs_core::FlowField;

fn pools() -> Vec<(String, ThreadPool)> {
    let n = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut out = vec![(
        "threads=1".to_string(),
        rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
    )];
    if n > 1 {
        out.push((format!("threads={n}"), rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()));
    }
    out
}

fn bench_flow(c: &mut Criterion) {
    let (a, b) = shifted_pair(128, 128, [3.0, 1.5], 5);
    let (a, b) = (a.to_gray(), b.to_gray());
    let params = FlowParams::default();
    let mut group = c.benchmark_group("pyramidal_flow_128");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |bench| {
            bench.iter(|| pool.install(|| pyramidal_flow(black_box(&a), black_box(&b), &params).unwrap()))
        });
    }
    group.finish();
}

fn bench_warps(c: &mut Criterion) {
    let (img1, img2) = shifted_pair(256, 256, [3.0, 1.5], 7);
    let gray = img2.to_gray();
    let f12 = FlowField::uniform(256, 256, [3.0, 1.5]);
    let f21 = FlowField::uniform(256, 256, [-3.0, -1.5]);
    let mut group = c.benchmark_group("warps_256");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("backward", &name), |bench| {
            bench.iter(|| pool.install(|| warp_backward(black_box(&gray), black_box(&f12)).unwrap()))
        });
        group.bench_function(BenchmarkId::new("synthesize_view", &name), |bench| {
            bench.iter(|| pool.install(|| synthesize_view(&img1, &img2, &f12, &f21, black_box(0.5)).unwrap()))
        });
    }
    group.finish();
}

fn bench_closeup(c: &mut Criterion) {
    let scene = MovingSquare { width: 256, height: 192, origin: [80, 70], side: 48, ..Default::default() };
    let (img1, img2) = scene.images();
    let (f12, f21) = scene.flows();
    let params = CloseupParams::default();
    let mut group = c.benchmark_group("closeup_256x192");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |bench| {
            bench.iter(|| pool.install(|| closeup_fused(&img1, &img2, &f12, &f21, 0.5, black_box(&params)).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_flow, bench_warps, bench_closeup);
criterion_main!(benches);
