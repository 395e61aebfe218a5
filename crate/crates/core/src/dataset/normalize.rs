//! Scene-level standardization and the NDVI channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{RasterStack, SampleType};

/// Below this standard deviation a band is treated as constant.
pub const STD_EPSILON: f64 = 1e-8;

/// Per-band mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BandStats {
    /// Statistics over every pixel of every band.
    pub fn compute(stack: &RasterStack) -> Self {
        Self::compute_where(stack, |_| true)
    }

    /// Statistics over pixels that are not null in `null`.
    pub fn compute_valid(stack: &RasterStack, null: &[bool]) -> Self {
        Self::compute_where(stack, |i| !null[i])
    }

    fn compute_where(stack: &RasterStack, keep: impl Fn(usize) -> bool) -> Self {
        let mut mean = Vec::with_capacity(stack.bands());
        let mut std = Vec::with_capacity(stack.bands());
        for k in 0..stack.bands() {
            let band = stack.band(k);
            let (mut n, mut sum) = (0usize, 0.0f64);
            for (i, &v) in band.iter().enumerate() {
                if keep(i) {
                    n += 1;
                    sum += v as f64;
                }
            }
            if n == 0 {
                mean.push(0.0);
                std.push(0.0);
                continue;
            }
            let m = sum / n as f64;
            let ss: f64 = band
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, &v)| (v as f64 - m).powi(2))
                .sum();
            mean.push(m);
            std.push((ss / n as f64).sqrt());
        }
        Self { mean, std }
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }
}

/// `(x - mean_k) / std_k` per band; bands with `std_k < 1e-8` become 0.
pub fn standardize(stack: &RasterStack, stats: &BandStats) -> Result<RasterStack> {
    if stats.bands() != stack.bands() || stats.std.len() != stats.mean.len() {
        return Err(Error::Shape(format!(
            "stats for {} bands, raster has {}",
            stats.bands(),
            stack.bands()
        )));
    }
    let mut out = stack.clone().with_dtype(SampleType::F32);
    for k in 0..stack.bands() {
        let (m, s) = (stats.mean[k], stats.std[k]);
        for v in out.band_mut(k) {
            *v = if s < STD_EPSILON {
                0.0
            } else {
                ((*v as f64 - m) / s) as f32
            };
        }
    }
    Ok(out)
}

/// `(nir - red) / (nir + red)`, 0 where the sum vanishes, clamped to [-1, 1].
pub fn compute_ndvi(stack: &RasterStack, red_band: usize, nir_band: usize) -> Result<Vec<f32>> {
    if red_band >= stack.bands() || nir_band >= stack.bands() {
        return Err(Error::Config(format!(
            "NDVI bands ({red_band}, {nir_band}) out of range for {} bands",
            stack.bands()
        )));
    }
    Ok(stack
        .band(red_band)
        .iter()
        .zip(stack.band(nir_band))
        .map(|(&red, &nir)| {
            let (red, nir) = (red as f64, nir as f64);
            let sum = nir + red;
            if sum == 0.0 {
                0.0
            } else {
                ((nir - red) / sum).clamp(-1.0, 1.0) as f32
            }
        })
        .collect())
}
