//! Synthetic bitemporal scenes with planted clearings and corrupted
//! "producer" probability maps, for desk-scale end-to-end runs.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::rasterize_polygons;
use crate::error::{Error, Result};
use crate::preprocess::BBox;
use crate::raster::io::{write_mask, write_raster};
use crate::raster::{BinaryMask, ClassLabel, GeoTransform, Polygon, PolygonLayer, RasterStack, Ring};
use crate::rng::{rng_for, stream};

pub const BANDS: usize = 7;

/// Per-band mean digital numbers of standing forest.
pub const FOREST: [f64; BANDS] = [700.0, 800.0, 1000.0, 850.0, 3500.0, 1700.0, 800.0];
/// Bare soil after a clear cut.
pub const CLEARED: [f64; BANDS] = [1100.0, 1300.0, 1700.0, 2100.0, 2700.0, 3300.0, 2500.0];
/// Burned clear cut: bright in shortwave infrared but with a forest-like NDVI.
pub const MAGENTA: [f64; BANDS] = [650.0, 750.0, 850.0, 700.0, 2800.0, 3000.0, 2200.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlobKind {
    Cleared,
    Magenta,
}

impl BlobKind {
    pub fn signature(self) -> &'static [f64; BANDS] {
        match self {
            BlobKind::Cleared => &CLEARED,
            BlobKind::Magenta => &MAGENTA,
        }
    }
}

/// How a simulated detector corrupts the reference mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerModel {
    pub name: String,
    /// Fraction of reference-positive pixels turned off.
    pub miss_rate: f64,
    /// Fraction of reference-negative pixels turned on.
    pub false_alarm_rate: f64,
    /// Box radius of the smoothing applied to the error field; 0 makes errors
    /// independent per pixel, larger values make them come in clumps.
    pub clump_radius: usize,
    /// Box radius of the blur applied to the corrupted map.
    pub blur_radius: usize,
    /// Standard deviation of additive Gaussian noise before clamping.
    pub noise_std: f64,
}

impl ProducerModel {
    pub fn perfect(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            miss_rate: 0.0,
            false_alarm_rate: 0.0,
            clump_radius: 0,
            blur_radius: 0,
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.miss_rate) || !unit(self.false_alarm_rate) || !(self.noise_std >= 0.0) {
            return Err(Error::Config(format!("invalid producer model {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub n_blobs: usize,
    /// Blob radius range in pixels.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Per-band noise standard deviation relative to the band mean.
    pub band_noise: f64,
    /// Probability that a blob has the burned (magenta) spectrum.
    pub magenta_rate: f64,
    pub seed: u64,
    pub year_pair: (u16, u16),
    pub pixel_size: f64,
    pub producers: Vec<ProducerModel>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 512,
            width: 512,
            n_blobs: 12,
            radius_min: 8.0,
            radius_max: 40.0,
            band_noise: 0.04,
            magenta_rate: 0.0,
            seed: 0,
            year_pair: (2018, 2019),
            pixel_size: 30.0,
            producers: default_producers(),
        }
    }
}

/// Four detectors with different failure modes.
pub fn default_producers() -> Vec<ProducerModel> {
    let m = |name: &str, miss, fa, clump, blur, noise| ProducerModel {
        name: name.into(),
        miss_rate: miss,
        false_alarm_rate: fa,
        clump_radius: clump,
        blur_radius: blur,
        noise_std: noise,
    };
    vec![
        m("misses", 0.40, 0.008, 4, 1, 0.10),
        m("alarms", 0.12, 0.050, 4, 1, 0.10),
        m("blurry", 0.30, 0.030, 8, 3, 0.05),
        m("noisy", 0.15, 0.015, 2, 1, 0.30),
    ]
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene must be at least 1x1".into()));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(Error::Config(format!(
                "invalid blob radius range {}..{}",
                self.radius_min, self.radius_max
            )));
        }
        if self.n_blobs > 0 && (2.0 * STAR_MAX * self.radius_max + 2.0) as usize > self.height.min(self.width) {
            return Err(Error::Config(format!(
                "blobs of radius {} do not fit a {}x{} scene",
                self.radius_max, self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.magenta_rate) || !(self.band_noise >= 0.0) || !(self.pixel_size > 0.0) {
            return Err(Error::Config("magenta rate must be in [0, 1], noise and pixel size positive".into()));
        }
        if self.year_pair.0 >= self.year_pair.1 {
            return Err(Error::Config(format!("year pair {:?} is not increasing", self.year_pair)));
        }
        self.producers.iter().try_for_each(ProducerModel::validate)
    }

    pub fn transform(&self) -> GeoTransform {
        GeoTransform::north_up(500_000.0, 9_000_000.0, self.pixel_size, -self.pixel_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub kind: BlobKind,
    /// Center in continuous pixel coordinates (row, col).
    pub center: (f64, f64),
    pub radius: f64,
    /// Square inside the blob, usable as a spectral sample region.
    pub core: BBox,
    /// Whether every core pixel still carries this blob's spectrum after
    /// later blobs were painted.
    pub core_pure: bool,
    /// Pixels rasterized from this blob's polygon alone.
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub t1: RasterStack,
    pub t2: RasterStack,
    pub polygons: PolygonLayer,
    pub truth: BinaryMask,
    /// Pixels whose second-date spectrum is the burned signature.
    pub magenta: BinaryMask,
    pub blobs: Vec<BlobInfo>,
}

// vertex radius jitter of the star-shaped blobs
const STAR_MIN: f64 = 0.75;
const STAR_MAX: f64 = 1.3;
const STAR_VERTICES: usize = 16;

fn draw_pixel(mean: f64, rel: f64, rng: &mut impl Rng) -> f32 {
    let v = if rel > 0.0 {
        Normal::new(mean, rel * mean).expect("positive std").sample(rng)
    } else {
        mean
    };
    v.round().clamp(1.0, 65535.0) as f32
}

/// Fills every pixel of `band` from `sig`, one generator per row.
fn fill_band(data: &mut [f32], width: usize, mean: f64, rel: f64, seed: u64, tag: u64) {
    data.par_chunks_mut(width).enumerate().for_each(|(row, chunk)| {
        let mut rng = rng_for(seed, stream::SYNTH_SCENE, tag, row as u64);
        for v in chunk {
            *v = draw_pixel(mean, rel, &mut rng);
        }
    });
}

/// Star-shaped polygon around `center` (pixel space), returned as world
/// coordinates.
fn star(center: (f64, f64), radius: f64, t: &GeoTransform, rng: &mut impl Rng) -> Result<Ring> {
    let step = 2.0 * PI / STAR_VERTICES as f64;
    let pts = (0..STAR_VERTICES)
        .map(|k| {
            let a = step * (k as f64 + rng.gen_range(-0.2..0.2));
            let r = radius * rng.gen_range(STAR_MIN..STAR_MAX);
            let (x, y) = t.pixel_to_world(center.0 + r * a.sin(), center.1 + r * a.cos());
            [x, y]
        })
        .collect();
    Ring::new(pts)
}

/// Pixels fully inside the disk of radius `STAR_MIN * cos(step) * radius`.
fn core_box(center: (f64, f64), radius: f64, height: usize, width: usize) -> BBox {
    let half = (STAR_MIN * (0.7 * 2.0 * PI / STAR_VERTICES as f64).cos() * radius / 2f64.sqrt()).max(0.5);
    let lo = |c: f64| (c - half).ceil().max(0.0) as usize;
    let hi = |c: f64, n: usize| ((c + half).floor() as usize).saturating_sub(1).min(n - 1);
    let (r0, c0) = (lo(center.0), lo(center.1));
    BBox::new((c0, r0), (hi(center.1, width).max(c0), hi(center.0, height).max(r0)))
}

pub fn gen_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let t = cfg.transform();
    let names: Vec<String> = (1..=BANDS).map(|b| format!("B{b}")).collect();

    let mut d1 = vec![0f32; BANDS * h * w];
    d1.par_chunks_mut(h * w).enumerate().for_each(|(b, band)| {
        fill_band(band, w, FOREST[b], cfg.band_noise, cfg.seed, 1 + b as u64);
    });

    let mut rng = rng_for(cfg.seed, stream::SYNTH_SCENE, 0, 0);
    let mut polygons = Vec::with_capacity(cfg.n_blobs);
    let mut kind_map: Vec<Option<BlobKind>> = vec![None; h * w];
    let mut blobs = Vec::with_capacity(cfg.n_blobs);
    for _ in 0..cfg.n_blobs {
        let radius = rng.gen_range(cfg.radius_min..=cfg.radius_max);
        let margin = STAR_MAX * radius + 1.0;
        let center = (
            rng.gen_range(margin..=h as f64 - margin),
            rng.gen_range(margin..=w as f64 - margin),
        );
        let kind = if rng.gen_bool(cfg.magenta_rate) {
            BlobKind::Magenta
        } else {
            BlobKind::Cleared
        };
        let poly = Polygon {
            exterior: star(center, radius, &t, &mut rng)?,
            holes: vec![],
            class: ClassLabel { year: cfg.year_pair.1 },
        };
        let single = rasterize_polygons(&PolygonLayer::new(vec![poly.clone()]), &t, h, w, cfg.year_pair)?;
        for (k, &m) in kind_map.iter_mut().zip(single.data()) {
            if m != 0 {
                *k = Some(kind);
            }
        }
        blobs.push(BlobInfo {
            kind,
            center,
            radius,
            core: core_box(center, radius, h, w),
            core_pure: false,
            pixels: single.count_ones(),
        });
        polygons.push(poly);
    }
    for b in &mut blobs {
        let c = b.core;
        b.core_pure =
            (c.row0..=c.row1).all(|r| (c.col0..=c.col1).all(|col| kind_map[r * w + col] == Some(b.kind)));
    }
    let polygons = PolygonLayer::new(polygons);
    let truth = rasterize_polygons(&polygons, &t, h, w, cfg.year_pair)?;

    let mut d2 = d1.clone();
    d2.par_chunks_mut(h * w).enumerate().for_each(|(b, band)| {
        band.par_chunks_mut(w).enumerate().for_each(|(row, chunk)| {
            let mut rng = rng_for(cfg.seed, stream::SYNTH_SCENE, 100 + b as u64, row as u64);
            for (col, v) in chunk.iter_mut().enumerate() {
                if let Some(kind) = kind_map[row * w + col] {
                    *v = draw_pixel(kind.signature()[b], cfg.band_noise, &mut rng);
                }
            }
        });
    });
    let magenta = BinaryMask::new(
        h,
        w,
        kind_map.iter().map(|k| (*k == Some(BlobKind::Magenta)) as u8).collect(),
        t,
    )?;
    let stack = |d: Vec<f32>| -> Result<RasterStack> {
        RasterStack::new(BANDS, h, w, d, t)?
            .with_band_names(names.clone())
            .map(|s| s.with_dtype(crate::raster::SampleType::U16))
    };
    Ok(SynthScene {
        t1: stack(d1)?,
        t2: stack(d2)?,
        polygons,
        truth,
        magenta,
        blobs,
    })
}

impl SynthScene {
    /// Core box of the first blob of `kind` whose core is unmixed.
    pub fn pure_core(&self, kind: BlobKind) -> Option<BBox> {
        self.blobs.iter().find(|b| b.kind == kind && b.core_pure).map(|b| b.core)
    }

    /// Writes `t1.json`, `t2.json`, `truth.geojson`, `truth_mask.json`,
    /// `magenta_mask.json` and `blobs.json` (plus raster payloads) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_raster(&self.t1, &dir.join("t1.json"))?;
        write_raster(&self.t2, &dir.join("t2.json"))?;
        self.polygons.write(&dir.join("truth.geojson"))?;
        write_mask(&self.truth, &dir.join("truth_mask.json"))?;
        write_mask(&self.magenta, &dir.join("magenta_mask.json"))?;
        let p = dir.join("blobs.json");
        std::fs::write(&p, serde_json::to_string_pretty(&self.blobs)?).map_err(|e| Error::io(p, e))
    }
}

/// Box mean with the window clipped at the borders.
pub(crate) fn box_blur(src: &[f64], height: usize, width: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return src.to_vec();
    }
    let pass = |data: &[f64], len: usize, stride: usize, lines: usize, step: usize| -> Vec<f64> {
        let mut out = vec![0.0; data.len()];
        let mut prefix = vec![0.0; len + 1];
        for l in 0..lines {
            for i in 0..len {
                prefix[i + 1] = prefix[i] + data[l * step + i * stride];
            }
            for i in 0..len {
                let (a, b) = (i.saturating_sub(radius), (i + radius + 1).min(len));
                out[l * step + i * stride] = (prefix[b] - prefix[a]) / (b - a) as f64;
            }
        }
        out
    };
    let rows = pass(src, width, 1, height, width);
    pass(&rows, height, width, width, 1)
}

/// Indicator of the `k` smallest values among the selected positions.
fn lowest(field: &[f64], select: impl Fn(usize) -> bool, rate: f64) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..field.len()).filter(|&i| select(i)).collect();
    let k = (rate * idx.len() as f64).round() as usize;
    let mut out = vec![false; field.len()];
    if k == 0 {
        return out;
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| field[a].total_cmp(&field[b]).then(a.cmp(&b)));
    }
    for &i in &idx[..k.min(idx.len())] {
        out[i] = true;
    }
    out
}

/// Corrupts `truth` into a probability map. Exactly `round(rate * n)`
/// pixels of each class are flipped, chosen where a (possibly smoothed)
/// random field is lowest; the result is blurred, noised and clamped.
pub fn gen_producer_maps<R: Rng>(truth: &BinaryMask, model: &ProducerModel, rng: &mut R) -> Result<RasterStack> {
    model.validate()?;
    let (h, w) = (truth.height(), truth.width());
    let t = truth.data();
    let white: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
    let field = box_blur(&white, h, w, model.clump_radius);
    let miss = lowest(&field, |i| t[i] != 0, model.miss_rate);
    // reuse the field with the opposite sign so misses and alarms are not
    // drawn from the same clumps
    let neg: Vec<f64> = field.iter().map(|v| -v).collect();
    let alarm = lowest(&neg, |i| t[i] == 0, model.false_alarm_rate);
    let base: Vec<f64> = (0..h * w)
        .map(|i| if t[i] != 0 { !miss[i] as u8 as f64 } else { alarm[i] as u8 as f64 })
        .collect();
    let mut map = box_blur(&base, h, w, model.blur_radius);
    if model.noise_std > 0.0 {
        let n = Normal::new(0.0, model.noise_std).expect("non-negative std");
        for v in &mut map {
            *v += n.sample(rng);
        }
    }
    let data = map.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    RasterStack::new(1, h, w, data, *truth.transform())?.with_band_names(vec![model.name.clone()])
}

/// One map per configured producer, each from its own seeded stream.
pub fn gen_producers(truth: &BinaryMask, cfg: &SynthConfig) -> Result<Vec<RasterStack>> {
    cfg.producers
        .par_iter()
        .enumerate()
        .map(|(i, m)| gen_producer_maps(truth, m, &mut rng_for(cfg.seed, stream::SYNTH_PRODUCER, i as u64, 0)))
        .collect()
}
