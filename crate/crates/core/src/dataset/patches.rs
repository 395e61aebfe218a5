//! Sliding-window patch extraction over aligned image pairs and masks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RasterStack, Window};

/// Where a patch came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scene_id: String,
    pub year_pair: (u16, u16),
    /// Position among the patches emitted for this scene and year pair.
    pub index: usize,
    pub band_names: Vec<String>,
    /// Top-left pixel of the window in the cropped scene.
    #[serde(default)]
    pub origin: (usize, usize),
}

/// Aligned (image t1, image t2, change mask) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `channels x height x width`, band-major.
    pub img1: Vec<f32>,
    pub img2: Vec<f32>,
    /// `height x width` of {0,1}.
    pub mask: Vec<u8>,
    pub meta: SampleMeta,
}

impl PatchSample {
    pub fn validate(&self) -> Result<()> {
        let n = self.channels * self.height * self.width;
        if self.img1.len() != n || self.img2.len() != n || self.mask.len() != self.height * self.width {
            return Err(Error::Shape(format!(
                "sample arrays do not match {}x{}x{}",
                self.channels, self.height, self.width
            )));
        }
        if self.mask.iter().any(|&v| v > 1) {
            return Err(Error::Domain("sample mask has values other than 0/1".into()));
        }
        Ok(())
    }

    pub fn mask(&self) -> BinaryMask {
        BinaryMask::from_vec(self.height, self.width, self.mask.clone()).expect("validated mask")
    }

    /// Early-fusion input: img1 channels followed by img2 channels.
    pub fn fused(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.img1.len() * 2);
        v.extend_from_slice(&self.img1);
        v.extend_from_slice(&self.img2);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub window: usize,
    pub stride: usize,
    /// A window is dropped when its null fraction exceeds this value.
    pub max_null_frac: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            window: 256,
            stride: 200,
            max_null_frac: 0.05,
        }
    }
}

/// Start offsets `0, stride, 2*stride, ...` with `start + window <= dim`.
pub fn window_starts(dim: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    if window > dim {
        return Err(Error::Config(format!("window {window} larger than image dimension {dim}")));
    }
    Ok((0..=dim - window).step_by(stride).collect())
}

/// All windows in row-major order.
pub fn patch_windows(height: usize, width: usize, cfg: &PatchConfig) -> Result<Vec<Window>> {
    let rows = window_starts(height, cfg.window, cfg.stride)?;
    let cols = window_starts(width, cfg.window, cfg.stride)?;
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| Window::new(r, c, cfg.window, cfg.window)))
        .collect())
}

fn crop_band_major(src: &RasterStack, w: &Window) -> Vec<f32> {
    let mut out = Vec::with_capacity(src.bands() * w.area());
    for k in 0..src.bands() {
        let band = src.band(k);
        for r in w.row..w.row + w.height {
            let s = r * src.width() + w.col;
            out.extend_from_slice(&band[s..s + w.width]);
        }
    }
    out
}

/// Windowing with explicit per-pixel null flags (the union over both dates).
pub fn extract_patches_with_nulls(
    img1: &RasterStack,
    img2: &RasterStack,
    mask: &BinaryMask,
    null: &[bool],
    cfg: &PatchConfig,
    scene_id: &str,
    year_pair: (u16, u16),
) -> Result<Vec<PatchSample>> {
    let (h, w) = (img1.height(), img1.width());
    if img2.height() != h || img2.width() != w || mask.height() != h || mask.width() != w {
        return Err(Error::Shape(format!(
            "inputs not aligned: {}x{}, {}x{}, mask {}x{}",
            h,
            w,
            img2.height(),
            img2.width(),
            mask.height(),
            mask.width()
        )));
    }
    if img1.bands() != img2.bands() {
        return Err(Error::Shape(format!(
            "band count differs between dates: {} vs {}",
            img1.bands(),
            img2.bands()
        )));
    }
    if null.len() != h * w {
        return Err(Error::Shape("null flags do not cover the image".into()));
    }
    let windows = patch_windows(h, w, cfg)?;
    let kept: Vec<Window> = windows
        .par_iter()
        .filter(|win| {
            let mut nulls = 0usize;
            for r in win.row..win.row + win.height {
                nulls += null[r * w + win.col..r * w + win.col + win.width]
                    .iter()
                    .filter(|&&n| n)
                    .count();
            }
            nulls as f64 / win.area() as f64 <= cfg.max_null_frac
        })
        .copied()
        .collect();
    kept.par_iter()
        .enumerate()
        .map(|(j, win)| {
            Ok(PatchSample {
                channels: img1.bands(),
                height: win.height,
                width: win.width,
                img1: crop_band_major(img1, win),
                img2: crop_band_major(img2, win),
                mask: crate::raster::Gridded::crop(mask, win)?.into_data(),
                meta: SampleMeta {
                    scene_id: scene_id.to_string(),
                    year_pair,
                    index: j,
                    band_names: img1.band_names().to_vec(),
                    origin: (win.row, win.col),
                },
            })
        })
        .collect()
}

/// Cuts aligned windows from both dates and the mask. A window is dropped when
/// the union of null pixels (all bands zero) across both images covers more
/// than `max_null_frac` of it.
pub fn extract_patches(
    img1: &RasterStack,
    img2: &RasterStack,
    mask: &BinaryMask,
    cfg: &PatchConfig,
    scene_id: &str,
    year_pair: (u16, u16),
) -> Result<Vec<PatchSample>> {
    if img1.pixels() != img2.pixels() {
        return Err(Error::Shape("image sizes differ".into()));
    }
    let null: Vec<bool> = img1
        .null_mask()
        .into_iter()
        .zip(img2.null_mask())
        .map(|(a, b)| a || b)
        .collect();
    extract_patches_with_nulls(img1, img2, mask, &null, cfg, scene_id, year_pair)
}
