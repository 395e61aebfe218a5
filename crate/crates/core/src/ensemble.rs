//! Combining several producers' probability maps: simple majority vote,
//! probability-weighted vote and a trained BasicFCN combiner.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{patch_windows, PatchConfig};
use crate::error::{Error, Result};
use crate::fcn::{self, FcnWeights, FocalConfig, Tensor4, TrainConfig, TrainOutcome, TrainSample};
use crate::postprocess::{binarize, remove_small};
use crate::raster::{io::read_raster, BinaryMask, GeoTransform, Grid, Gridded, RasterStack, Window};

/// N aligned H x W probability maps with one threshold per producer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMapSet {
    height: usize,
    width: usize,
    maps: Vec<Vec<f32>>,
    thresholds: Vec<f32>,
    transform: GeoTransform,
}

impl ProbabilityMapSet {
    pub fn new(height: usize, width: usize, maps: Vec<Vec<f32>>, thresholds: Vec<f32>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::Config("an ensemble needs at least one producer".into()));
        }
        if maps.len() != thresholds.len() {
            return Err(Error::Shape(format!("{} maps but {} thresholds", maps.len(), thresholds.len())));
        }
        for (i, m) in maps.iter().enumerate() {
            if m.len() != height * width {
                return Err(Error::Shape(format!(
                    "producer {i} has {} pixels, expected {height}x{width}",
                    m.len()
                )));
            }
            if let Some(v) = m.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("producer {i} has probability {v} outside [0, 1]")));
            }
        }
        if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Domain(format!("threshold {t} outside (0, 1)")));
        }
        Ok(Self {
            height,
            width,
            maps,
            thresholds,
            transform: GeoTransform::identity(),
        })
    }

    /// Single-band rasters on one grid.
    pub fn from_rasters(rasters: &[RasterStack], thresholds: Vec<f32>) -> Result<Self> {
        let first = rasters
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one producer".into()))?;
        for (i, r) in rasters.iter().enumerate() {
            if r.bands() != 1 {
                return Err(Error::Shape(format!("producer {i} has {} bands, expected 1", r.bands())));
            }
            if r.transform() != first.transform() {
                return Err(Error::GridMismatch(format!("producer {i} is on a different grid")));
            }
        }
        let mut set = Self::new(
            first.height(),
            first.width(),
            rasters.iter().map(|r| r.data().to_vec()).collect(),
            thresholds,
        )?;
        set.transform = *first.transform();
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn maps(&self) -> &[Vec<f32>] {
        &self.maps
    }

    pub fn thresholds(&self) -> &[f32] {
        &self.thresholds
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    /// Producer `i` binarized with its own threshold.
    pub fn binarized(&self, i: usize) -> BinaryMask {
        binarize(&self.maps[i], self.height, self.width, self.thresholds[i])
            .expect("shape checked at construction")
            .with_transform(self.transform)
    }

    /// Maps stacked as an N-channel input for the combiner.
    pub fn stacked(&self) -> Vec<f32> {
        self.maps.concat()
    }
}

impl Gridded for ProbabilityMapSet {
    fn grid(&self) -> Grid {
        Grid {
            transform: self.transform,
            height: self.height,
            width: self.width,
        }
    }

    fn crop(&self, w: &Window) -> Result<Self> {
        if w.height == 0 || w.width == 0 || !w.fits(self.height, self.width) {
            return Err(Error::Shape(format!(
                "window {w:?} outside {}x{} maps",
                self.height, self.width
            )));
        }
        let maps = self
            .maps
            .iter()
            .map(|m| {
                (w.row..w.row + w.height)
                    .flat_map(|r| &m[r * self.width + w.col..r * self.width + w.col + w.width])
                    .copied()
                    .collect()
            })
            .collect();
        Ok(Self {
            height: w.height,
            width: w.width,
            maps,
            thresholds: self.thresholds.clone(),
            transform: self.transform.shifted(w.row as isize, w.col as isize),
        })
    }
}

/// Cuts a region and its reference into `window`-sized tiles at `stride`,
/// for use as combiner training pairs.
pub fn tile_region(
    set: &ProbabilityMapSet,
    truth: &BinaryMask,
    window: usize,
    stride: usize,
) -> Result<Vec<(ProbabilityMapSet, BinaryMask)>> {
    if (truth.height(), truth.width()) != (set.height, set.width) {
        return Err(Error::Shape(format!(
            "reference is {}x{}, maps are {}x{}",
            truth.height(),
            truth.width(),
            set.height,
            set.width
        )));
    }
    let cfg = PatchConfig {
        window,
        stride,
        max_null_frac: 1.0,
    };
    patch_windows(set.height, set.width, &cfg)?
        .iter()
        .map(|w| Ok((set.crop(w)?, truth.crop(w)?)))
        .collect()
}

fn mask_from(set: &ProbabilityMapSet, data: Vec<u8>) -> BinaryMask {
    BinaryMask::new(set.height, set.width, data, set.transform).expect("0/1 data of the right size")
}

/// Pixel is positive iff more than half the producers say so; a tie
/// (possible for even N) is negative.
pub fn simple_vote(set: &ProbabilityMapSet) -> BinaryMask {
    let preds: Vec<BinaryMask> = (0..set.len()).map(|i| set.binarized(i)).collect();
    vote_binarized(set, &preds)
}

/// Simple vote over producer masks that first had regions smaller than
/// `min_keep` pixels removed.
pub fn simple_vote_filtered(set: &ProbabilityMapSet, min_keep: usize) -> BinaryMask {
    let preds: Vec<BinaryMask> = (0..set.len())
        .into_par_iter()
        .map(|i| remove_small(&set.binarized(i), min_keep))
        .collect();
    vote_binarized(set, &preds)
}

fn vote_binarized(set: &ProbabilityMapSet, preds: &[BinaryMask]) -> BinaryMask {
    let n = preds.len();
    let data = (0..set.height * set.width)
        .into_par_iter()
        .map(|p| {
            let yes = preds.iter().filter(|m| m.data()[p] != 0).count();
            (2 * yes > n) as u8
        })
        .collect();
    mask_from(set, data)
}

/// Sum of small non-negative values in a fixed (sorted) order, so the
/// result does not depend on producer order.
fn ordered_sum(vals: &mut [f64]) -> f64 {
    vals.sort_by(f64::total_cmp);
    vals.iter().sum()
}

/// Pixel is positive iff the mean probability is strictly greater than the
/// mean of the producer thresholds.
pub fn weighted_vote(set: &ProbabilityMapSet) -> BinaryMask {
    let n = set.len() as f64;
    let mut ts: Vec<f64> = set.thresholds.iter().map(|&t| t as f64).collect();
    let tau = ordered_sum(&mut ts) / n;
    let data = (0..set.height * set.width)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(set.len()),
            |buf: &mut Vec<f64>, p| {
                buf.clear();
                buf.extend(set.maps.iter().map(|m| m[p] as f64));
                (ordered_sum(buf) / n > tau) as u8
            },
        )
        .collect();
    mask_from(set, data)
}

/// Training pairs for the combiner: one probability set per region plus
/// the reference mask of that region.
pub fn fcn_ensemble_samples(sets: &[(ProbabilityMapSet, BinaryMask)]) -> Result<Vec<TrainSample>> {
    let n = sets.first().map(|(s, _)| s.len()).unwrap_or(0);
    sets.iter()
        .enumerate()
        .map(|(i, (s, m))| {
            if s.len() != n {
                return Err(Error::Shape(format!("sample {i} has {} producers, expected {n}", s.len())));
            }
            if (m.height(), m.width()) != (s.height, s.width) {
                return Err(Error::Shape(format!("sample {i}: reference mask does not match the maps")));
            }
            TrainSample::new(n, s.height, s.width, s.stacked(), m.data().to_vec())
        })
        .collect()
}

/// Trains the combiner on N-channel probability inputs.
pub fn fcn_ensemble_train(
    sets: &[(ProbabilityMapSet, BinaryMask)],
    cfg: &TrainConfig,
    focal: &FocalConfig,
) -> Result<TrainOutcome> {
    let samples = fcn_ensemble_samples(sets)?;
    fcn::train(&samples, cfg, focal)
}

/// Combiner probabilities for a set, H x W.
pub fn fcn_ensemble_probabilities(w: &FcnWeights<f32>, set: &ProbabilityMapSet) -> Result<Vec<f32>> {
    if w.n_in() != set.len() {
        return Err(Error::Shape(format!(
            "combiner was trained on {} producers, got {}",
            w.n_in(),
            set.len()
        )));
    }
    let x = Tensor4::new(1, set.len(), set.height, set.width, set.stacked())?;
    Ok(w.forward(&x, false)?.into_data())
}

pub fn fcn_ensemble_predict(w: &FcnWeights<f32>, tau: f32, set: &ProbabilityMapSet) -> Result<BinaryMask> {
    let p = fcn_ensemble_probabilities(w, set)?;
    Ok(binarize(&p, set.height, set.width, tau)?.with_transform(set.transform))
}

/// Producer entry of an ensemble manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerEntry {
    pub name: String,
    pub threshold: f32,
}

/// Where a region's producer maps were predicted relative to the
/// producers' own training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionRole {
    /// Seen by the producers during training.
    Train,
    /// Held out from producer training; default source of combiner data.
    Heldout,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub id: String,
    pub role: RegionRole,
    /// Reference mask sidecar, if known.
    pub truth: Option<PathBuf>,
    /// One single-band probability raster per producer, in producer order.
    pub maps: Vec<PathBuf>,
}

/// Producers, their thresholds and per-region map paths. Relative paths
/// resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub producers: Vec<ProducerEntry>,
    pub regions: Vec<RegionEntry>,
}

impl EnsembleManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.producers.is_empty() {
            return Err(Error::Config("manifest lists no producers".into()));
        }
        for r in &self.regions {
            if r.maps.len() != self.producers.len() {
                return Err(Error::Config(format!(
                    "region {} lists {} maps for {} producers",
                    r.id,
                    r.maps.len(),
                    self.producers.len()
                )));
            }
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Vec<f32> {
        self.producers.iter().map(|p| p.threshold).collect()
    }

    /// Loads a region's maps as a probability set.
    pub fn load_region(&self, region: &RegionEntry, base: &Path) -> Result<ProbabilityMapSet> {
        let rasters = region
            .maps
            .iter()
            .map(|p| read_raster(&base.join(p)))
            .collect::<Result<Vec<_>>>()?;
        ProbabilityMapSet::from_rasters(&rasters, self.thresholds()).map_err(|e| match e {
            Error::Shape(m) | Error::GridMismatch(m) => Error::Shape(format!("region {}: {m}", region.id)),
            other => other,
        })
    }
}
