//! Seeded inputs shared by the benchmarks.

use deforest_core::fcn::{FcnWeights, Tensor4};
use deforest_core::raster::{ClassLabel, Polygon, Ring};
use deforest_core::rng::rng_for;
use deforest_core::{BinaryMask, GeoTransform, PolygonLayer};
use rand::Rng;

pub fn random_mask(size: usize, density: f64, seed: u64) -> BinaryMask {
    let mut rng = rng_for(seed, 0, 0, 0);
    BinaryMask::from_fn(size, size, |_, _| rng.gen_bool(density))
}

/// `n` random convex polygons scattered over a `size` x `size` grid of `t`.
pub fn random_layer(n: usize, size: usize, t: &GeoTransform, seed: u64) -> PolygonLayer {
    let mut rng = rng_for(seed, 1, 0, 0);
    let polys = (0..n)
        .map(|_| {
            let (cr, cc) = (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64));
            let r = rng.gen_range(4.0..size as f64 / 8.0);
            let k = rng.gen_range(5..20);
            let pts = (0..k)
                .map(|i| {
                    let a = i as f64 * std::f64::consts::TAU / k as f64;
                    let (x, y) = t.pixel_to_world(cr + r * a.sin(), cc + r * a.cos());
                    [x, y]
                })
                .collect();
            Polygon {
                exterior: Ring::new(pts).expect("distinct vertices"),
                holes: vec![],
                class: ClassLabel { year: 2019 },
            }
        })
        .collect();
    PolygonLayer::new(polys)
}

pub fn random_input(n: usize, c: usize, size: usize, seed: u64) -> Tensor4<f32> {
    let mut rng = rng_for(seed, 2, 0, 0);
    let data = (0..n * c * size * size).map(|_| rng.gen::<f32>()).collect();
    Tensor4::new(n, c, size, size, data).expect("positive dims")
}

pub fn network(n_in: usize) -> FcnWeights<f32> {
    FcnWeights::init(n_in, 0)
}

pub fn random_band(len: usize, seed: u64) -> Vec<u16> {
    let mut rng = rng_for(seed, 3, 0, 0);
    (0..len).map(|_| rng.gen_range(5000..20000)).collect()
}
