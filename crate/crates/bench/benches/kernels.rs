use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use lsk_core::ops::{self, ConvSpec, PoolMode};
use lsk_core::{Backbone, BackboneConfig, DecompositionPlan, Init, LskConfig, LskModule, Tensor4};
use std::hint::black_box;

fn input(c: usize, size: usize) -> Tensor4<f32> {
    Tensor4::from_fn([1, c, size, size], |_, ch, i, j| ((ch * 7 + i * 3 + j) % 13) as f32 / 13.0 - 0.5)
}

fn depthwise(cr: &mut Criterion) {
    let mut g = cr.benchmark_group("depthwise_conv");
    let x = input(64, 64);
    for (k, d) in [(5, 1), (7, 3), (23, 1)] {
        let w = Tensor4::full([64, 1, k, k], 0.01f32);
        let b = vec![0.0; 64];
        g.throughput(Throughput::Elements((x.numel() * k * k) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(format!("k{k}_d{d}")), &(k, d), |bench, &(k, d)| {
            bench.iter(|| ops::depthwise_conv(black_box(&x), &w, &b, &ConvSpec::same(k, d)).unwrap())
        });
    }
    g.finish();
}

fn pointwise_and_pool(cr: &mut Criterion) {
    let x = input(64, 64);
    let w = Tensor4::full([32, 64, 1, 1], 0.01f32);
    let b = vec![0.0; 32];
    cr.bench_function("pointwise_conv 64->32 64x64", |bench| {
        bench.iter(|| ops::pointwise_conv(black_box(&x), &w, &b).unwrap())
    });
    cr.bench_function("channel_pool max 64x64x64", |bench| {
        bench.iter(|| ops::channel_pool(black_box(&x), PoolMode::Max))
    });
}

fn lsk_module(cr: &mut Criterion) {
    let cfg = LskConfig::new(DecompositionPlan::default_pair(), 64);
    let m = LskModule::<f32>::init(cfg, &mut Init::new(0)).unwrap();
    let x = input(64, 32);
    cr.bench_function("lsk forward c64 32x32", |bench| bench.iter(|| m.forward(black_box(&x)).unwrap()));
    let (out, cache) = m.forward_cached(&x).unwrap();
    cr.bench_function("lsk backward c64 32x32", |bench| bench.iter(|| m.backward(&cache, black_box(&out.y)).unwrap()));
}

fn backbone(cr: &mut Criterion) {
    let net = Backbone::<f32>::init(BackboneConfig::tiny(), 0).unwrap();
    let x = input(3, 128);
    let mut g = cr.benchmark_group("backbone");
    g.sample_size(10);
    g.bench_function("tiny forward 128x128", |bench| bench.iter(|| net.forward(black_box(&x)).unwrap()));
    g.finish();
}

criterion_group!(benches, depthwise, pointwise_and_pool, lsk_module, backbone);
criterion_main!(benches);
