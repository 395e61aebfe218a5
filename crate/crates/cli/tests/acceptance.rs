//! Acceptance suite. Each check prints one PASS/FAIL line; the process
//! exits non-zero if any check fails.

use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use deforest_core::dataset::{compute_ndvi, extract_patches, patch_windows, rasterize_polygons, PatchConfig};
use deforest_core::ensemble::{
    fcn_ensemble_predict, fcn_ensemble_samples, simple_vote, tile_region, weighted_vote, ProbabilityMapSet,
};
use deforest_core::fcn::{
    default_grid, fcn_forward, io::encode_weights, select_threshold, train, AdamConfig, FcnWeights, FocalConfig,
    Tensor4, TrainConfig, HIDDEN,
};
use deforest_core::metrics::ConfusionCounts;
use deforest_core::postprocess::{label_components, remove_small, DEFAULT_MIN_KEEP};
use deforest_core::preprocess::{
    equalize_histogram, fit_magenta, Equalizer, MagentaReplacement, TexturePatch, DEFAULT_WIDTH_FACTOR,
};
use deforest_core::raster::{ClassLabel, Gridded, Polygon, Ring, Window};
use deforest_core::rng::rng_for;
use deforest_core::synth::{gen_producers, gen_scene, BlobKind, SynthConfig};
use deforest_core::{BinaryMask, GeoTransform, PolygonLayer, RasterStack};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- network

const GRAD_H: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor. Batch norm makes the first-layer bias gradients exactly
/// zero, where the central difference only sees rounding noise near 1e-11.
const GRAD_FLOOR: f64 = 1e-6;

fn random_weights(n_in: usize, seed: u64) -> FcnWeights<f64> {
    let mut w = FcnWeights::<f64>::init(n_in, seed);
    let mut rng = rng_for(seed, 1, 0, 0);
    for t in w.params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    for (m, v) in w.running_mean.iter_mut().zip(&mut w.running_var) {
        *m = rng.gen_range(-0.5..0.5);
        *v = rng.gen_range(0.2..2.0);
    }
    w
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let focal = FocalConfig::default();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (k, seed) in (11..16u64).enumerate() {
        let n_in = if k % 2 == 0 { 2 } else { 4 };
        let (n, h, w) = (2, 6, 6);
        let mut rng = rng_for(seed, 2, 0, 0);
        let x = Tensor4::new(n, n_in, h, w, (0..n * n_in * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let y: Vec<u8> = (0..n * h * w).map(|_| rng.gen_bool(0.3) as u8).collect();
        let net = random_weights(n_in, seed);
        let (_, grads, _) = net.loss_and_grad(&x, &y, &focal).unwrap();
        for (t, g) in grads.tensors().iter().enumerate() {
            for i in 0..g.len() {
                let eval = |d: f64| {
                    let mut p = net.clone();
                    p.params.tensors_mut()[t][i] += d;
                    p.loss(&x, &y, &focal).unwrap()
                };
                let numeric = (eval(GRAD_H) - eval(-GRAD_H)) / (2.0 * GRAD_H);
                let rel = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs()).max(GRAD_FLOOR);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    ensure(worst <= GRAD_REL_TOL, || format!("worst relative error {worst:.3e}"))?;
    ensure(start.elapsed() < Duration::from_secs(10), || format!("took {:?}", start.elapsed()))?;
    Ok(format!("{checked} parameters, worst relative error {worst:.2e}"))
}

/// Direct evaluation of conv3x3 -> batch norm -> ReLU -> conv3x3 -> sigmoid.
fn naive_network(net: &FcnWeights<f64>, x: &[f64], n: usize, c: usize, h: usize, w: usize, batch_stats: bool) -> Vec<f64> {
    let p = &net.params;
    let px = |s: &[f64], ch: usize, chans: usize, i: isize, j: isize, sample: usize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            0.0
        } else {
            s[((sample * chans + ch) * h + i as usize) * w + j as usize]
        }
    };
    let mut hidden = vec![0.0; n * HIDDEN * h * w];
    for s in 0..n {
        for o in 0..HIDDEN {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = p.conv1_b[o];
                    for ci in 0..c {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                acc += p.conv1_w[((o * c + ci) * 3 + ki) * 3 + kj]
                                    * px(x, ci, c, i as isize + ki as isize - 1, j as isize + kj as isize - 1, s);
                            }
                        }
                    }
                    hidden[((s * HIDDEN + o) * h + i) * w + j] = acc;
                }
            }
        }
    }
    for o in 0..HIDDEN {
        let vals: Vec<f64> = (0..n)
            .flat_map(|s| hidden[(s * HIDDEN + o) * h * w..(s * HIDDEN + o + 1) * h * w].to_vec())
            .collect();
        let (mean, var) = if batch_stats {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            (m, vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64)
        } else {
            (net.running_mean[o], net.running_var[o])
        };
        for s in 0..n {
            for v in &mut hidden[(s * HIDDEN + o) * h * w..(s * HIDDEN + o + 1) * h * w] {
                *v = (p.bn_gamma[o] * (*v - mean) / (var + net.eps).sqrt() + p.bn_beta[o]).max(0.0);
            }
        }
    }
    let mut out = vec![0.0; n * h * w];
    for s in 0..n {
        for i in 0..h {
            for j in 0..w {
                let mut acc = p.conv2_b[0];
                for ci in 0..HIDDEN {
                    for ki in 0..3 {
                        for kj in 0..3 {
                            acc += p.conv2_w[(ci * 3 + ki) * 3 + kj]
                                * px(&hidden, ci, HIDDEN, i as isize + ki as isize - 1, j as isize + kj as isize - 1, s);
                        }
                    }
                }
                out[(s * h + i) * w + j] = 1.0 / (1.0 + (-acc).exp());
            }
        }
    }
    out
}

const CONV_TOL: f64 = 1e-5;

fn conv_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = rng_for(seed, 3, 0, 0);
        let (n, c, h, w) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..12), rng.gen_range(1..12));
        let net64 = random_weights(c, seed);
        // use exactly the f32 weights in both implementations
        let net32: FcnWeights<f32> = net64.cast();
        let net64: FcnWeights<f64> = net32.cast();
        let x32: Vec<f32> = (0..n * c * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x64: Vec<f64> = x32.iter().map(|&v| v as f64).collect();
        let x = Tensor4::new(n, c, h, w, x32).unwrap();
        for training in [false, true] {
            let got = fcn_forward(&net32, &x, training).unwrap();
            let want = naive_network(&net64, &x64, n, c, h, w, training);
            for (&g, &e) in got.data().iter().zip(&want) {
                worst = worst.max((g as f64 - e).abs());
            }
        }
    }
    ensure(worst <= CONV_TOL, || format!("max abs difference {worst:.3e}"))?;
    ensure(start.elapsed() < Duration::from_secs(5), || format!("took {:?}", start.elapsed()))?;
    Ok(format!("20 random shapes, inference and batch modes, max abs diff {worst:.2e}"))
}

// ---------------------------------------------------------------- metrics

const METRIC_TOL: f64 = 1e-12;

fn metric_oracle() -> Outcome {
    let mut rng = rng_for(7, 4, 0, 0);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let mut draw = || if rng.gen_bool(0.05) { 0 } else { rng.gen_range(0..1_000_000u64) };
        let (tp, fp, tn, fn_) = (draw(), draw(), draw(), draw());
        let c = ConfusionCounts::new(tp, fp, tn, fn_);
        let (tpf, fpf, tnf, fnf) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
        let n = tpf + fpf + tnf + fnf;
        let ratio = |a: f64, b: f64| if b == 0.0 { None } else { Some(a / b) };
        let expected = [
            ratio(tpf + tnf, n),
            ratio(tpf, tpf + fpf + fnf),
            ratio(tpf, tpf + fpf),
            ratio(tpf, tpf + fnf),
            ratio(2.0 * tpf, 2.0 * tpf + fpf + fnf),
            ratio(
                2.0 * (tpf * tnf - fnf * fpf),
                (tpf + fpf) * (fpf + tnf) + (tpf + fnf) * (fnf + tnf),
            ),
        ];
        let got = [c.accuracy(), c.iou(), c.precision(), c.recall(), c.f1(), c.kappa()];
        for (i, (g, e)) in got.iter().zip(expected).enumerate() {
            match (g, e) {
                (Ok(g), Some(e)) => worst = worst.max((g - e).abs()),
                (Err(_), None) => {}
                _ => return Err(format!("case {k} metric {i}: got {g:?}, expected {e:?} for {c:?}")),
            }
        }
        if n > 0.0 {
            let (po, pe) = c.agreement().unwrap();
            let pe_ref = ((tpf + fpf) * (tpf + fnf) + (fnf + tnf) * (fpf + tnf)) / (n * n);
            worst = worst.max((po - (tpf + tnf) / n).abs()).max((pe - pe_ref).abs());
        }
    }
    ensure(worst <= METRIC_TOL, || format!("max deviation {worst:.3e}"))?;
    let balanced = ConfusionCounts::new(1, 1, 1, 1);
    ensure(balanced.kappa() == Ok(0.0), || format!("kappa(1,1,1,1) = {:?}", balanced.kappa()))?;
    let perfect = ConfusionCounts::new(2, 0, 2, 0);
    for r in [perfect.accuracy(), perfect.iou(), perfect.precision(), perfect.recall(), perfect.f1(), perfect.kappa()] {
        ensure(r == Ok(1.0), || format!("(2,0,2,0) gave {r:?}"))?;
    }
    Ok(format!("1000 random counts, max deviation {worst:.1e}; fixtures exact"))
}

// ---------------------------------------------------------------- components

fn flood_fill_labels(m: &BinaryMask) -> Vec<u32> {
    let (h, w) = (m.height(), m.width());
    let mut out = vec![0u32; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if m.data()[start] == 0 || out[start] != 0 {
            continue;
        }
        next += 1;
        out[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            let nbrs = [
                (r > 0).then(|| i - w),
                (r + 1 < h).then(|| i + w),
                (c > 0).then(|| i - 1),
                (c + 1 < w).then(|| i + 1),
            ];
            for j in nbrs.into_iter().flatten() {
                if m.data()[j] != 0 && out[j] == 0 {
                    out[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    out
}

fn components() -> Outcome {
    for bits in 0u32..1 << 16 {
        let m = BinaryMask::from_fn(4, 4, |r, c| bits >> (r * 4 + c) & 1 == 1);
        let got = label_components(&m);
        if got.labels != flood_fill_labels(&m) {
            return Err(format!("4x4 mask {bits:#06x} disagrees"));
        }
    }
    let mut rng = rng_for(5, 5, 0, 0);
    for k in 0..10_000 {
        let p = rng.gen_range(0.2..0.8);
        let m = BinaryMask::from_fn(32, 32, |_, _| rng.gen_bool(p));
        let got = label_components(&m);
        let want = flood_fill_labels(&m);
        if got.labels != want {
            return Err(format!("random 32x32 mask {k} disagrees"));
        }
        let mut sizes = vec![0usize; got.count()];
        want.iter().filter(|&&l| l > 0).for_each(|&l| sizes[l as usize - 1] += 1);
        ensure(sizes == got.sizes, || format!("random mask {k}: sizes differ"))?;
    }
    let fifty = BinaryMask::from_fn(20, 20, |r, c| (2..7).contains(&r) && (3..13).contains(&c));
    let mut fifty_one = fifty.clone();
    fifty_one.set(7, 3, true);
    ensure(fifty.count_ones() == 50 && fifty_one.count_ones() == 51, || "fixture sizes".into())?;
    ensure(remove_small(&fifty, DEFAULT_MIN_KEEP).count_ones() == 0, || "50-pixel region kept".into())?;
    ensure(remove_small(&fifty_one, DEFAULT_MIN_KEEP) == fifty_one, || "51-pixel region removed".into())?;
    Ok("65536 exhaustive 4x4 + 10000 random 32x32 masks agree; 50 removed, 51 kept".into())
}

// ---------------------------------------------------------------- equalization

fn equalization() -> Outcome {
    let mut rng = rng_for(3, 6, 0, 0);
    for k in 0..200 {
        let levels: u32 = if k % 2 == 0 { 65536 } else { rng.gen_range(2..=4096) };
        let n = rng.gen_range(1..5000);
        let spread = rng.gen_range(1..levels);
        let base = rng.gen_range(0..levels - spread + 1);
        let vals: Vec<u16> = (0..n).map(|_| (base + rng.gen_range(0..spread)) as u16).collect();
        let eq = Equalizer::fit(vals.iter().copied(), levels).unwrap();
        ensure(eq.lut().windows(2).all(|p| p[0] <= p[1]), || format!("case {k}: mapping not monotone"))?;
        let out = equalize_histogram(&vals, levels).unwrap();
        let top = vals.iter().max().unwrap();
        let at_top = out[vals.iter().position(|v| v == top).unwrap()];
        ensure(at_top as u32 == levels - 1, || format!("case {k}: maximum maps to {at_top}"))?;
        for (a, b) in vals.iter().zip(&out).take(50) {
            for (c, d) in vals.iter().zip(&out).take(50) {
                ensure(a >= c || b <= d, || format!("case {k}: order reversed"))?;
            }
        }
    }
    for (v, levels) in [(0u16, 256u32), (77, 256), (40_000, 65536)] {
        let out = equalize_histogram(&vec![v; 37], levels).unwrap();
        ensure(out.iter().all(|&o| o as u32 == levels - 1), || format!("constant {v} -> {:?}", out[0]))?;
    }
    let mut two = vec![10u16; 50];
    two.extend(vec![200u16; 50]);
    let out = equalize_histogram(&two, 256).unwrap();
    ensure((out[0], out[99]) == (128, 255), || format!("two-value fixture -> ({}, {})", out[0], out[99]))?;
    Ok("200 random histograms monotone; constant -> L-1; 50/50 -> (128, 255)".into())
}

// ---------------------------------------------------------------- rasterization

fn pnpoly(rings: &[Vec<[f64; 2]>], x: f64, y: f64) -> bool {
    let mut inside = false;
    for ring in rings {
        let n = ring.len();
        let mut j = n - 1;
        for i in 0..n {
            let ([xi, yi], [xj, yj]) = (ring[i], ring[j]);
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
    }
    inside
}

fn convex_ring(rng: &mut impl Rng, t: &GeoTransform, center: (f64, f64), radius: f64) -> Vec<[f64; 2]> {
    let n = rng.gen_range(3..14);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .iter()
        .map(|a| {
            let (x, y) = t.pixel_to_world(center.0 + radius * a.sin(), center.1 + radius * a.cos());
            [x, y]
        })
        .collect()
}

fn rasterization() -> Outcome {
    let t = GeoTransform::north_up(600_000.0, 8_800_000.0, 30.0, -30.0);
    let (h, w) = (64, 64);
    let mut rng = rng_for(9, 7, 0, 0);
    let mut checked = 0;
    for k in 0..600 {
        let center = (rng.gen_range(-10.0..74.0), rng.gen_range(-10.0..74.0));
        let rings = if k < 500 {
            let radius = rng.gen_range(0.5..40.0);
            vec![convex_ring(&mut rng, &t, center, radius)]
        } else {
            let outer = rng.gen_range(10.0..40.0);
            // jittered, evenly spaced vertices leave gaps under 1.8 * TAU / 8,
            // so the outer ring contains the circle of radius 0.76 * outer
            let n = rng.gen_range(8..14);
            let ext = (0..n)
                .map(|k| {
                    let a = (k as f64 + rng.gen_range(0.0..0.8)) * std::f64::consts::TAU / n as f64;
                    let (x, y) = t.pixel_to_world(center.0 + outer * a.sin(), center.1 + outer * a.cos());
                    [x, y]
                })
                .collect();
            let inner = outer * 0.75 * rng.gen_range(0.3..1.0);
            let hole = convex_ring(&mut rng, &t, center, inner);
            vec![ext, hole]
        };
        let Ok(exterior) = Ring::new(rings[0].clone()) else { continue };
        let holes = rings[1..].iter().filter_map(|r| Ring::new(r.clone()).ok()).collect::<Vec<_>>();
        if holes.len() + 1 != rings.len() {
            continue;
        }
        let used: Vec<Vec<[f64; 2]>> = std::iter::once(&exterior).chain(&holes).map(|r| r.vertices().to_vec()).collect();
        let layer = PolygonLayer::new(vec![Polygon {
            exterior,
            holes,
            class: ClassLabel { year: 2019 },
        }]);
        let mask = rasterize_polygons(&layer, &t, h, w, (2018, 2019)).unwrap();
        for r in 0..h {
            for c in 0..w {
                let (x, y) = t.pixel_center(r, c);
                if (mask.get(r, c) == 1) != pnpoly(&used, x, y) {
                    return Err(format!("polygon {k}: pixel ({r}, {c}) disagrees"));
                }
            }
        }
        checked += 1;
    }
    ensure(checked >= 590, || format!("only {checked} valid polygons"))?;
    Ok(format!("{checked} polygons (500 convex, holed rest) match the centre oracle exactly"))
}

// ---------------------------------------------------------------- patches

fn patch_extraction() -> Outcome {
    let mut rng = rng_for(2, 8, 0, 0);
    for k in 0..200 {
        let (h, w) = (rng.gen_range(1..300), rng.gen_range(1..300));
        let window = rng.gen_range(1..=h.min(w));
        let stride = rng.gen_range(1..=window + 10);
        let cfg = PatchConfig {
            window,
            stride,
            max_null_frac: 0.05,
        };
        let got = patch_windows(h, w, &cfg).unwrap();
        let (nr, nc) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let want: Vec<Window> = (0..nr)
            .flat_map(|i| (0..nc).map(move |j| Window::new(i * stride, j * stride, window, window)))
            .collect();
        ensure(got == want, || format!("case {k}: {h}x{w} window {window} stride {stride}"))?;
    }
    let fixture = |nulls: usize| {
        let t = GeoTransform::identity();
        let mut data = vec![1.0f32; 2 * 100];
        for i in 0..nulls {
            data[i * 7] = 0.0;
            data[100 + i * 7] = 0.0;
        }
        let img1 = RasterStack::new(2, 10, 10, data, t).unwrap();
        let img2 = RasterStack::new(2, 10, 10, vec![1.0; 200], t).unwrap();
        let cfg = PatchConfig {
            window: 10,
            stride: 10,
            max_null_frac: 0.05,
        };
        extract_patches(&img1, &img2, &BinaryMask::zeros(10, 10, t), &cfg, "s", (2018, 2019))
            .unwrap()
            .len()
    };
    ensure(fixture(6) == 0, || "6% null window kept".into())?;
    ensure(fixture(5) == 1, || "5% null window dropped".into())?;
    Ok("200 random configurations match the closed form; 6% null dropped, 5% kept".into())
}

// ---------------------------------------------------------------- voting

fn voting() -> Outcome {
    let mut rng = rng_for(4, 9, 0, 0);
    for k in 0..500 {
        let n = rng.gen_range(1..=7);
        let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let maps: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..h * w).map(|_| if rng.gen_bool(0.1) { 0.5 } else { rng.gen() }).collect())
            .collect();
        let taus: Vec<f32> = (0..n).map(|_| if rng.gen_bool(0.3) { 0.5 } else { rng.gen_range(0.05..0.95) }).collect();
        let set = ProbabilityMapSet::new(h, w, maps.clone(), taus.clone()).unwrap();
        let got = simple_vote(&set);
        for p in 0..h * w {
            let yes = (0..n).filter(|&i| maps[i][p] > taus[i]).count();
            ensure(got.data()[p] == (2 * yes > n) as u8, || format!("case {k} pixel {p}: {yes} of {n}"))?;
        }
    }
    let tie = ProbabilityMapSet::new(1, 1, vec![vec![0.9], vec![0.7], vec![0.2], vec![0.4]], vec![0.5; 4]).unwrap();
    ensure(simple_vote(&tie).data() == [0], || "4-producer tie voted positive".into())?;
    let edge = ProbabilityMapSet::new(1, 2, vec![vec![0.25, 0.25], vec![0.75, 0.875]], vec![0.5, 0.5]).unwrap();
    ensure(weighted_vote(&edge).data() == [0, 1], || format!("weighted boundary gave {:?}", weighted_vote(&edge).data()))?;
    Ok("500 random sets match brute-force counting; tie -> 0; mean = tau -> 0".into())
}

// ---------------------------------------------------------------- end to end

const E2E_LIMIT: Duration = Duration::from_secs(300);
const INDIVIDUAL_F1: (f64, f64) = (0.70, 0.85);
const VS_BEST_MARGIN: f64 = 0.005;
const VS_VOTE_MARGIN: f64 = 0.01;

fn f1(pred: &BinaryMask, truth: &BinaryMask) -> f64 {
    ConfusionCounts::accumulate(pred, truth).unwrap().f1().unwrap()
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let cfg = SynthConfig {
        height: 1024,
        width: 1024,
        n_blobs: 30,
        radius_min: 15.0,
        radius_max: 55.0,
        seed: 9,
        ..Default::default()
    };
    let scene = gen_scene(&cfg).unwrap();
    let maps = gen_producers(&scene.truth, &cfg).unwrap();
    let (top, bottom) = (Window::new(0, 0, 512, 1024), Window::new(512, 0, 512, 1024));
    let (truth_train, truth_test) = (scene.truth.crop(&top).unwrap(), scene.truth.crop(&bottom).unwrap());
    let crops = |win: &Window| maps.iter().map(|m| m.crop(win).unwrap()).collect::<Vec<_>>();
    let (train_maps, test_maps) = (crops(&top), crops(&bottom));
    let taus: Vec<f32> = train_maps
        .iter()
        .map(|m| select_threshold(m.data(), truth_train.data(), &default_grid()).unwrap().tau)
        .collect();
    let train_set = ProbabilityMapSet::from_rasters(&train_maps, taus.clone()).unwrap();
    let test_set = ProbabilityMapSet::from_rasters(&test_maps, taus).unwrap();

    let individual: Vec<f64> = (0..test_set.len()).map(|i| f1(&test_set.binarized(i), &truth_test)).collect();
    let vote = f1(&simple_vote(&test_set), &truth_test);
    for (p, f) in cfg.producers.iter().zip(&individual) {
        ensure((INDIVIDUAL_F1.0..=INDIVIDUAL_F1.1).contains(f), || format!("producer {} F1 {f:.4} out of range", p.name))?;
    }

    let samples = fcn_ensemble_samples(&tile_region(&train_set, &truth_train, 16, 16).unwrap()).unwrap();
    let tc = TrainConfig {
        epochs: 50,
        batch_size: 32,
        seed: 9,
        adam: AdamConfig {
            lr: 1e-4,
            ..Default::default()
        },
        ..Default::default()
    };
    let focal = FocalConfig {
        alpha: 0.25,
        gamma: 2.0,
    };
    let outcome = train(&samples, &tc, &focal).unwrap();
    let combiner = f1(&fcn_ensemble_predict(&outcome.weights, outcome.threshold.tau, &test_set).unwrap(), &truth_test);
    let elapsed = start.elapsed();

    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let again = single.install(|| train(&samples, &tc, &focal).unwrap());
    let bytes = |o: &deforest_core::fcn::TrainOutcome| encode_weights(&o.weights, Some(o.threshold.tau)).unwrap();
    ensure(bytes(&again) == bytes(&outcome), || "retraining on one thread changed the weights".into())?;

    let best = individual.iter().cloned().fold(f64::MIN, f64::max);
    let summary = format!(
        "producers F1 {:?}, simple vote {vote:.4}, combiner {combiner:.4} (epoch {}, tau {:.2}), {:.1}s",
        individual.iter().map(|f| (f * 1e4).round() / 1e4).collect::<Vec<_>>(),
        outcome.best_epoch,
        outcome.threshold.tau,
        elapsed.as_secs_f64()
    );
    ensure(combiner >= best - VS_BEST_MARGIN, || format!("combiner below best producer: {summary}"))?;
    ensure(combiner >= vote - VS_VOTE_MARGIN, || format!("combiner below simple vote: {summary}"))?;
    ensure(elapsed <= E2E_LIMIT, || format!("too slow: {summary}"))?;
    Ok(summary)
}

const NDVI_DROP: f32 = 0.25;
const MIN_RECALL_GAIN: f64 = 0.05;

fn magenta_ablation() -> Outcome {
    let cfg = SynthConfig {
        height: 512,
        width: 512,
        n_blobs: 24,
        radius_min: 10.0,
        radius_max: 30.0,
        magenta_rate: 0.5,
        seed: 21,
        ..Default::default()
    };
    let scene = gen_scene(&cfg).unwrap();
    let magenta_core = scene.pure_core(BlobKind::Magenta).ok_or("no pure magenta blob")?;
    let cleared_core = scene.pure_core(BlobKind::Cleared).ok_or("no pure cleared blob")?;
    let replacement = MagentaReplacement {
        signature: fit_magenta(&scene.t2, magenta_core, &[3, 4, 5, 6], DEFAULT_WIDTH_FACTOR).unwrap(),
        texture: TexturePatch::from_stack(&scene.t2, cleared_core).unwrap(),
    };
    let recall = |t1: &RasterStack, t2: &RasterStack| {
        let (a, b) = (compute_ndvi(t1, 3, 4).unwrap(), compute_ndvi(t2, 3, 4).unwrap());
        let (mut hit, mut total) = (0usize, 0usize);
        for i in 0..a.len() {
            if scene.magenta.data()[i] == 1 {
                total += 1;
                hit += (a[i] - b[i] > NDVI_DROP) as usize;
            }
        }
        hit as f64 / total as f64
    };
    let before = recall(&scene.t1, &scene.t2);
    let after = recall(
        &replacement.apply(&scene.t1).unwrap(),
        &replacement.apply(&scene.t2).unwrap(),
    );
    let summary = format!(
        "{} planted magenta pixels: recall {:.2}% without, {:.2}% with replacement",
        scene.magenta.count_ones(),
        before * 100.0,
        after * 100.0
    );
    ensure(after - before >= MIN_RECALL_GAIN, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- CLI determinism

fn deforest(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deforest"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out.stdout)
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_determinism() -> Outcome {
    let steps: &[&[&str]] = &[
        &["synth", "--out", "s", "--height", "192", "--width", "192", "--blobs", "6", "--radius-min", "8",
          "--radius-max", "20", "--magenta-rate", "0.5"],
        &["build-dataset", "--scenes", "s/scenes.json", "--out", "ds", "--window", "64", "--stride", "40"],
        &["build-dataset", "--scenes", "s/scenes.json", "--out", "ds_eq", "--window", "64", "--stride", "40",
          "--equalization", "raw", "--magenta-signature", "s/magenta_signature.json",
          "--magenta-texture", "s/magenta_texture.json"],
        &["train-ensemble", "--manifest", "s/ensemble.json", "--out", "w.fcnw", "--epochs", "3", "--log", "train.json"],
        &["vote", "--manifest", "s/ensemble.json", "--mode", "simple", "--out", "simple"],
        &["vote", "--manifest", "s/ensemble.json", "--mode", "simple", "--min-area", "10", "--out", "simple_f"],
        &["vote", "--manifest", "s/ensemble.json", "--mode", "weighted", "--out", "weighted"],
        &["vote", "--manifest", "s/ensemble.json", "--mode", "fcn", "--weights", "w.fcnw", "--out", "fcn"],
        &["evaluate", "--truth", "s/regions/test/truth.json", "--pred", "simple/test.json", "--pred",
          "fcn/test.json", "--out", "report.json"],
        &["postprocess", "--input", "fcn/test.json", "--out", "fcn_clean.json", "--min-area", "20"],
    ];
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for threads in ["1", "3", "8"] {
        let dir = root.path().join(format!("t{threads}"));
        std::fs::create_dir_all(&dir).unwrap();
        let mut stdout = Vec::new();
        for step in steps {
            let mut args = step.to_vec();
            args.extend(["--seed", "17", "--threads", threads, "--json"]);
            stdout.extend(deforest(&dir, &args)?);
        }
        std::fs::write(dir.join("stdout.json"), stdout).unwrap();
        trees.push(tree(&dir));
    }
    for t in &trees[1..] {
        ensure(t.keys().eq(trees[0].keys()), || "different file sets".into())?;
        for (k, v) in t {
            ensure(*v == trees[0][k], || format!("{k} differs between thread counts"))?;
        }
    }
    Ok(format!("{} subcommand runs x 3 thread counts, {} files byte-identical", steps.len(), trees[0].len()))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 11] = [
        ("gradient check against central differences", gradient_check),
        ("forward pass against direct convolution", conv_oracle),
        ("metrics against closed forms", metric_oracle),
        ("connected components against flood fill", components),
        ("histogram equalization properties", equalization),
        ("rasterization against point-in-polygon", rasterization),
        ("patch enumeration and null filter", patch_extraction),
        ("voting semantics", voting),
        ("end-to-end synthetic ensemble", end_to_end),
        ("magenta replacement ablation", magenta_ablation),
        ("CLI determinism across thread counts", cli_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("acceptance {:>2} PASS  {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {:>2} FAIL  {name} ({secs:.1}s): {why}", i + 1)
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
