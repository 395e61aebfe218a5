//! Scene-to-samples pipeline and the on-disk dataset tree.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cdp1::write_sample;
use super::normalize::{compute_ndvi, standardize, BandStats};
use super::patches::{extract_patches_with_nulls, patch_windows, PatchConfig, PatchSample};
use super::rasterize::rasterize_polygons;
use crate::error::{Error, Result};
use crate::preprocess::{equalize_raw_band, MagentaReplacement};
use crate::raster::{intersection_windows, resample_to_grid, BinaryMask, Gridded, PolygonLayer, RasterStack};

pub const NDVI_BAND_NAME: &str = "NDVI";

/// Where histogram equalization happens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualizationMode {
    #[default]
    Off,
    /// On raw integer bands of the whole scene, before standardization.
    Raw,
    /// On stored standardized samples at load time, after quantization.
    Quantized,
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub patches: PatchConfig,
    /// Zero-based index of the red band (OLI band 4).
    pub red_band: usize,
    /// Zero-based index of the near-infrared band (OLI band 5).
    pub nir_band: usize,
    pub equalization: EqualizationMode,
    /// Intensity levels for raw equalization.
    pub raw_levels: u32,
    pub magenta: Option<MagentaReplacement>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            patches: PatchConfig::default(),
            red_band: 3,
            nir_band: 4,
            equalization: EqualizationMode::Off,
            raw_levels: 65536,
            magenta: None,
        }
    }
}

/// One scene observed at two dates plus its polygon layer.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub scene_id: String,
    pub t1: RasterStack,
    pub t2: RasterStack,
    pub polygons: PolygonLayer,
    pub year_pair: (u16, u16),
}

/// Aligned, cropped and normalized scene ready for windowing.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub img1: RasterStack,
    pub img2: RasterStack,
    pub mask: BinaryMask,
    /// Union of raw null pixels over both dates.
    pub null: Vec<bool>,
}

/// Rasterizes, aligns and crops the inputs to their common extent.
pub fn align_scene(scene: &SceneInput) -> Result<(RasterStack, RasterStack, BinaryMask)> {
    let t1 = &scene.t1;
    if t1.bands() != scene.t2.bands() {
        return Err(Error::Shape(format!(
            "scene {}: {} bands at t1, {} at t2",
            scene.scene_id,
            t1.bands(),
            scene.t2.bands()
        )));
    }
    let mask = rasterize_polygons(&scene.polygons, t1.transform(), t1.height(), t1.width(), scene.year_pair)?;
    let t2 = match intersection_windows(&[t1.grid(), scene.t2.grid()]) {
        Ok(_) => scene.t2.clone(),
        // off-phase or differently sized pixels: resample onto the t1 grid
        Err(Error::GridMismatch(_)) => resample_to_grid(&scene.t2, *t1.transform(), t1.height(), t1.width())?,
        Err(e) => return Err(e),
    };
    let windows = intersection_windows(&[t1.grid(), t2.grid(), mask.grid()])?;
    Ok((t1.crop(&windows[0])?, t2.crop(&windows[1])?, mask.crop(&windows[2])?))
}

fn normalize_date(raw: &RasterStack, null: &[bool], cfg: &BuildConfig) -> Result<RasterStack> {
    let raw = match &cfg.magenta {
        Some(m) => m.apply(raw)?,
        None => raw.clone(),
    };
    let ndvi = compute_ndvi(&raw, cfg.red_band, cfg.nir_band)?;
    let mut bands = raw;
    if cfg.equalization == EqualizationMode::Raw {
        let valid: Vec<bool> = null.iter().map(|&n| !n).collect();
        for k in 0..bands.bands() {
            equalize_raw_band(bands.band_mut(k), cfg.raw_levels, &valid)?;
        }
    }
    let stats = BandStats::compute_valid(&bands, null);
    let mut out = standardize(&bands, &stats)?;
    out.push_band(ndvi, NDVI_BAND_NAME)?;
    let n = out.pixels();
    for k in 0..out.bands() {
        let band = &mut out.data_mut()[k * n..(k + 1) * n];
        for (v, _) in band.iter_mut().zip(null).filter(|(_, &is_null)| is_null) {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Alignment, optional magenta replacement and equalization, NDVI and
/// scene-level standardization. Null pixels end up 0 in every channel.
pub fn prepare_scene(scene: &SceneInput, cfg: &BuildConfig) -> Result<PreparedScene> {
    let (t1, t2, mask) = align_scene(scene)?;
    let null: Vec<bool> = t1
        .null_mask()
        .into_iter()
        .zip(t2.null_mask())
        .map(|(a, b)| a || b)
        .collect();
    let img1 = normalize_date(&t1, &null, cfg)?;
    let img2 = normalize_date(&t2, &null, cfg)?;
    Ok(PreparedScene { img1, img2, mask, null })
}

pub fn build_scene(scene: &SceneInput, cfg: &BuildConfig) -> Result<Vec<PatchSample>> {
    let p = prepare_scene(scene, cfg)?;
    extract_patches_with_nulls(
        &p.img1,
        &p.img2,
        &p.mask,
        &p.null,
        &cfg.patches,
        &scene.scene_id,
        scene.year_pair,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub scene_id: String,
    pub split: Split,
    pub year_pair: (u16, u16),
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCount {
    pub scene_id: String,
    pub year_pair: (u16, u16),
    pub split: Split,
    pub windows: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub window: usize,
    pub stride: usize,
    pub max_null_frac: f64,
    pub equalization: EqualizationMode,
    pub magenta_replacement: bool,
    pub scenes: Vec<SceneCount>,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }
}

pub fn sample_path(split: Split, scene_id: &str, year_pair: (u16, u16), index: usize) -> PathBuf {
    let split = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    PathBuf::from(split)
        .join(scene_id)
        .join(format!("{}_{}", year_pair.0, year_pair.1))
        .join(format!("{index:05}.cdp1"))
}

/// Builds every scene and writes `<out>/<split>/<scene>/<y1>_<y2>/<j>.cdp1`
/// plus `<out>/manifest.json`. Scenes listed in `test_scenes` go to the test
/// split; all others to train, so no scene appears in both.
pub fn build_dataset(
    scenes: &[SceneInput],
    cfg: &BuildConfig,
    test_scenes: &[String],
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let mut seen = BTreeMap::new();
    for s in scenes {
        if seen.insert((s.scene_id.clone(), s.year_pair), ()).is_some() {
            return Err(Error::Config(format!(
                "scene {} with years {:?} listed twice",
                s.scene_id, s.year_pair
            )));
        }
    }
    let mut counts = Vec::new();
    let mut entries = Vec::new();
    for scene in scenes {
        let split = if test_scenes.contains(&scene.scene_id) {
            Split::Test
        } else {
            Split::Train
        };
        let samples = build_scene(scene, cfg)?;
        let windows = {
            let (t1, _, _) = align_scene(scene)?;
            patch_windows(t1.height(), t1.width(), &cfg.patches)?.len()
        };
        samples
            .par_iter()
            .map(|s| write_sample(s, &out_dir.join(sample_path(split, &s.meta.scene_id, s.meta.year_pair, s.meta.index))))
            .collect::<Result<Vec<()>>>()?;
        entries.extend(samples.iter().map(|s| ManifestEntry {
            path: sample_path(split, &s.meta.scene_id, s.meta.year_pair, s.meta.index),
            scene_id: s.meta.scene_id.clone(),
            split,
            year_pair: s.meta.year_pair,
            index: s.meta.index,
        }));
        counts.push(SceneCount {
            scene_id: scene.scene_id.clone(),
            year_pair: scene.year_pair,
            split,
            windows,
            samples: samples.len(),
        });
    }
    entries.sort_by(|a, b| (&a.scene_id, a.year_pair, a.index).cmp(&(&b.scene_id, b.year_pair, b.index)));
    let manifest = DatasetManifest {
        window: cfg.patches.window,
        stride: cfg.patches.stride,
        max_null_frac: cfg.patches.max_null_frac,
        equalization: cfg.equalization,
        magenta_replacement: cfg.magenta.is_some(),
        scenes: counts,
        samples: entries,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
