use criterion::{black_box, criterion_group, criterion_main, Criterion};
use meshpose_bench::*;
use meshpose_core::datagen::canny_edges;
use meshpose_core::geometry::rasterize;
use meshpose_core::inference::{infer_pose, InferenceConfig};
use meshpose_core::losses::reconstruction_loss_and_pose_gradient;

fn geometry(c: &mut Criterion) {
    let m = mesh();
    let cam = camera().downscaled(STRIDE);
    c.bench_function("rasterize_16x16", |b| b.iter(|| rasterize(&m.geometry, black_box(&pose()), &cam)));
    let full = camera();
    c.bench_function("rasterize_64x64", |b| b.iter(|| rasterize(&m.geometry, black_box(&pose()), &full)));
}

fn losses(c: &mut Criterion) {
    let m = mesh();
    let fm = oracle_map(&m);
    c.bench_function("loss_and_pose_gradient", |b| {
        b.iter(|| reconstruction_loss_and_pose_gradient(&fm, &m, black_box(&pose()), &camera()).unwrap())
    });
}

fn extractor_passes(c: &mut Criterion) {
    let ex = extractor();
    let img = scene().image;
    c.bench_function("extractor_forward", |b| b.iter(|| ex.forward(black_box(&img)).unwrap()));
    let (fm, cache) = ex.forward(&img).unwrap();
    let upstream = vec![0.01; fm.data.len()];
    c.bench_function("extractor_backward", |b| b.iter(|| ex.backward(&cache, black_box(&upstream)).unwrap()));
}

fn inference(c: &mut Criterion) {
    let m = mesh();
    let fm = oracle_map(&m);
    let cfg = InferenceConfig::default();
    let mut g = c.benchmark_group("inference");
    g.sample_size(10);
    g.bench_function("infer_pose_24_starts", |b| b.iter(|| infer_pose(black_box(&fm), &m, &camera(), &cfg).unwrap()));
    g.finish();
}

fn datagen(c: &mut Criterion) {
    let img = scene().image;
    c.bench_function("canny_64x64", |b| b.iter(|| canny_edges(black_box(&img), 0.1, 0.3).unwrap()));
    c.bench_function("generate_sample", |b| b.iter(scene));
}

criterion_group!(benches, geometry, losses, extractor_passes, inference, datagen);
criterion_main!(benches);
