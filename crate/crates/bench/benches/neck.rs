use std::hint::black_box;

use cefpn_bench::{neck_fixture, noise, rng};
use cefpn_core::cost::{count_flops, MacConvention};
use cefpn_core::neck::{self, InputGeometry, NeckConfig};
use cefpn_core::tensor::{ops, ParamInit};
use cefpn_core::ConvSpec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernels");
    for &(cin, hw) in &[(16usize, 32usize), (64, 16)] {
        let x = noise([1, cin, hw, hw], 1);
        let spec = ConvSpec::new(cin, cin, 3, true, ParamInit::Uniform, &mut rng(3));
        g.bench_with_input(BenchmarkId::new("conv3x3", format!("{cin}x{hw}x{hw}")), &x, |b, x| {
            b.iter(|| ops::conv2d(black_box(x), &spec).unwrap())
        });
    }
    let x = noise([1, 64, 16, 16], 4);
    g.bench_function("pixel_shuffle_r2", |b| b.iter(|| ops::pixel_shuffle(black_box(&x), 2).unwrap()));
    g.bench_function("pixel_shuffle_r4", |b| b.iter(|| ops::pixel_shuffle(black_box(&x), 4).unwrap()));
    g.bench_function("max_pool_k3s2", |b| b.iter(|| ops::max_pool2d(black_box(&x), 3, 2, 1).unwrap()));
    g.finish();
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("neck");
    g.sample_size(20);
    for cfg in [NeckConfig::fpn_baseline(16), NeckConfig::desk()] {
        let (params, bb) = neck_fixture(&cfg, 64, 64);
        let name = if cfg.modules.sce { "cefpn" } else { "fpn" };
        g.bench_function(format!("{name}_forward_c16_64x64"), |b| {
            b.iter(|| neck::cefpn_forward(black_box(&bb), &params, &cfg).unwrap())
        });
    }
    let cfg = NeckConfig::desk();
    let (params, bb) = neck_fixture(&cfg, 64, 64);
    g.bench_function("cefpn_forward_backward_c16_64x64", |b| {
        b.iter(|| {
            let (mut tape, trace) = neck::trace_forward(black_box(&bb), &params, &cfg, None).unwrap();
            let sums: Vec<_> = trace.outputs.iter().map(|&v| tape.sum(v)).collect();
            let mut loss = sums[0];
            for &s in &sums[1..] {
                loss = tape.add(loss, s).unwrap();
            }
            tape.backward(loss).unwrap()
        })
    });
    g.finish();
}

fn cost(c: &mut Criterion) {
    let cfg = NeckConfig::cefpn(256);
    let geometry = InputGeometry::new(1, 800, 1344);
    c.bench_function("count_flops_c256", |b| {
        b.iter(|| count_flops(black_box(&cfg), geometry, MacConvention::Two).unwrap())
    });
}

criterion_group!(benches, kernels, forward, cost);
criterion_main!(benches);
