use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use deforest_bench::{network, random_band, random_input, random_layer, random_mask};
use deforest_core::dataset::rasterize_polygons;
use deforest_core::fcn::fcn_forward;
use deforest_core::postprocess::{label_components, remove_small};
use deforest_core::preprocess::equalize_histogram;
use deforest_core::GeoTransform;

fn bench_labeling(c: &mut Criterion) {
    let mut g = c.benchmark_group("label_components");
    for size in [256, 1024] {
        let mask = random_mask(size, 0.45, 1);
        g.throughput(Throughput::Elements((size * size) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(size), &mask, |b, m| b.iter(|| label_components(black_box(m))));
    }
    g.finish();
    let mask = random_mask(1024, 0.45, 2);
    c.bench_function("remove_small/1024", |b| b.iter(|| remove_small(black_box(&mask), 51)));
}

fn bench_rasterize(c: &mut Criterion) {
    let t = GeoTransform::north_up(500_000.0, 9_000_000.0, 30.0, -30.0);
    let layer = random_layer(200, 1024, &t, 3);
    c.bench_function("rasterize/200x1024", |b| {
        b.iter(|| rasterize_polygons(black_box(&layer), &t, 1024, 1024, (2018, 2019)).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("fcn_forward");
    for n_in in [4, 15] {
        let w = network(n_in);
        let x = random_input(8, n_in, 64, 4);
        g.throughput(Throughput::Elements(8 * 64 * 64));
        g.bench_with_input(BenchmarkId::new("inference", n_in), &x, |b, x| {
            b.iter(|| fcn_forward(&w, black_box(x), false).unwrap())
        });
    }
    g.finish();
}

fn bench_equalize(c: &mut Criterion) {
    let band = random_band(1 << 20, 5);
    c.bench_function("equalize/1M/L65536", |b| b.iter(|| equalize_histogram(black_box(&band), 65536).unwrap()));
}

criterion_group!(benches, bench_labeling, bench_rasterize, bench_forward, bench_equalize);
criterion_main!(benches);
