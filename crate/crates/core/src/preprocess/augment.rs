//! Random crop-and-resize followed by vertical and horizontal flips, applied
//! identically to both dates and the mask.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PatchSample;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Range of the crop area as a fraction of the patch area.
    pub scale_min: f64,
    pub scale_max: f64,
    pub vflip_prob: f64,
    pub hflip_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale_min: 0.4,
            scale_max: 1.0,
            vflip_prob: 0.5,
            hflip_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs_ok = (0.0..=1.0).contains(&self.vflip_prob) && (0.0..=1.0).contains(&self.hflip_prob);
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max <= 1.0) || !probs_ok {
            return Err(Error::Config(format!("invalid augmentation config {self:?}")));
        }
        Ok(())
    }

    /// Generator for the given epoch and sample index.
    pub fn rng(&self, epoch: u64, index: u64) -> ChaCha8Rng {
        rng_for(self.seed, stream::AUGMENT, epoch, index)
    }
}

/// One draw of the geometric transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub crop_row: usize,
    pub crop_col: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub vflip: bool,
    pub hflip: bool,
}

impl AugmentParams {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            crop_row: 0,
            crop_col: 0,
            crop_height: height,
            crop_width: width,
            vflip: false,
            hflip: false,
        }
    }

    /// Always consumes exactly five uniforms, in a fixed order.
    pub fn draw<R: Rng + ?Sized>(height: usize, width: usize, cfg: &AugmentConfig, rng: &mut R) -> Self {
        let u: [f64; 5] = [rng.gen(), rng.gen(), rng.gen(), rng.gen(), rng.gen()];
        let scale = cfg.scale_min + u[0] * (cfg.scale_max - cfg.scale_min);
        let side = scale.sqrt();
        let ch = ((side * height as f64).round() as usize).clamp(1, height);
        let cw = ((side * width as f64).round() as usize).clamp(1, width);
        let pick = |u: f64, range: usize| ((u * (range + 1) as f64).floor() as usize).min(range);
        Self {
            crop_row: pick(u[1], height - ch),
            crop_col: pick(u[2], width - cw),
            crop_height: ch,
            crop_width: cw,
            vflip: u[3] < cfg.vflip_prob,
            hflip: u[4] < cfg.hflip_prob,
        }
    }

    fn source_row(&self, r: usize, height: usize) -> usize {
        if self.vflip {
            height - 1 - r
        } else {
            r
        }
    }

    fn source_col(&self, c: usize, width: usize) -> usize {
        if self.hflip {
            width - 1 - c
        } else {
            c
        }
    }
}

/// Continuous source coordinate inside the crop for output index `dst`.
fn src_coord(dst: usize, crop: usize, out: usize) -> f64 {
    let s = (dst as f64 + 0.5) * (crop as f64 / out as f64) - 0.5;
    s.clamp(0.0, (crop - 1) as f64)
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// Bilinear crop-resize plus flips for `channels x height x width` data.
pub fn transform_image(data: &[f32], channels: usize, height: usize, width: usize, p: &AugmentParams) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    let n = height * width;
    for r in 0..height {
        let sr = src_coord(p.source_row(r, height), p.crop_height, height);
        let r0 = sr.floor() as usize;
        let r1 = (r0 + 1).min(p.crop_height - 1);
        let fr = (sr - r0 as f64) as f32;
        for c in 0..width {
            let sc = src_coord(p.source_col(c, width), p.crop_width, width);
            let c0 = sc.floor() as usize;
            let c1 = (c0 + 1).min(p.crop_width - 1);
            let fc = (sc - c0 as f64) as f32;
            let (ar0, ar1) = (p.crop_row + r0, p.crop_row + r1);
            let (ac0, ac1) = (p.crop_col + c0, p.crop_col + c1);
            for k in 0..channels {
                let band = &data[k * n..(k + 1) * n];
                let top = lerp(band[ar0 * width + ac0], band[ar0 * width + ac1], fc);
                let bottom = lerp(band[ar1 * width + ac0], band[ar1 * width + ac1], fc);
                out[k * n + r * width + c] = lerp(top, bottom, fr);
            }
        }
    }
    out
}

/// Nearest-neighbour crop-resize plus flips for a mask.
pub fn transform_mask(mask: &[u8], height: usize, width: usize, p: &AugmentParams) -> Vec<u8> {
    let nearest = |dst: usize, crop: usize, out: usize| {
        (((dst as f64 + 0.5) * crop as f64 / out as f64).floor() as usize).min(crop - 1)
    };
    let mut out = vec![0u8; mask.len()];
    for r in 0..height {
        let sr = p.crop_row + nearest(p.source_row(r, height), p.crop_height, height);
        for c in 0..width {
            let sc = p.crop_col + nearest(p.source_col(c, width), p.crop_width, width);
            out[r * width + c] = mask[sr * width + sc];
        }
    }
    out
}

/// Augments an arbitrary `(inputs, mask)` pair.
pub fn augment_arrays<R: Rng + ?Sized>(
    inputs: &[f32],
    channels: usize,
    mask: &[u8],
    height: usize,
    width: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Vec<f32>, Vec<u8>) {
    let p = AugmentParams::draw(height, width, cfg, rng);
    (
        transform_image(inputs, channels, height, width, &p),
        transform_mask(mask, height, width, &p),
    )
}

/// Augments a patch; the same draw is used for img1, img2 and the mask.
pub fn augment<R: Rng + ?Sized>(sample: &PatchSample, cfg: &AugmentConfig, rng: &mut R) -> PatchSample {
    let p = AugmentParams::draw(sample.height, sample.width, cfg, rng);
    PatchSample {
        img1: transform_image(&sample.img1, sample.channels, sample.height, sample.width, &p),
        img2: transform_image(&sample.img2, sample.channels, sample.height, sample.width, &p),
        mask: transform_mask(&sample.mask, sample.height, sample.width, &p),
        ..sample.clone()
    }
}
