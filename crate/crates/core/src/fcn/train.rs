use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, OptimizerState};
use super::loss::{focal_loss_logits, FocalConfig};
use super::model::{sigmoid, BnMode, FcnWeights};
use super::tensor::Tensor4;
use super::threshold::{counts_at, default_grid, select_threshold, ThresholdChoice};
use crate::dataset::PatchSample;
use crate::error::{Error, Result};
use crate::preprocess::{augment_arrays, AugmentConfig};
use crate::rng::{key, rng_for, stream};

/// One training example: a C x H x W input and its H x W reference mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub inputs: Vec<f32>,
    pub mask: Vec<u8>,
}

impl TrainSample {
    pub fn new(channels: usize, height: usize, width: usize, inputs: Vec<f32>, mask: Vec<u8>) -> Result<Self> {
        if inputs.len() != channels * height * width || mask.len() != height * width {
            return Err(Error::Shape(format!(
                "sample {channels}x{height}x{width} got {} inputs and {} mask values",
                inputs.len(),
                mask.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            inputs,
            mask,
        })
    }
}

impl From<&PatchSample> for TrainSample {
    /// Early fusion: both dates stacked along the channel axis.
    fn from(s: &PatchSample) -> Self {
        Self {
            channels: 2 * s.channels,
            height: s.height,
            width: s.width,
            inputs: s.fused(),
            mask: s.mask.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub threshold_grid: Vec<f32>,
    pub seed: u64,
    pub adam: AdamConfig,
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 32,
            val_fraction: 0.2,
            threshold_grid: default_grid(),
            seed: 0,
            adam: AdamConfig::default(),
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.threshold_grid.is_empty() || self.threshold_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("threshold grid must be non-empty and inside [0, 1]".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Index split: `round(frac * n)` samples (at least one, leaving at least
/// one for training) chosen by a per-index hash, so the chosen indices do
/// not depend on sample order. Returns `(train, validation)`, both sorted.
pub fn validation_split(n: usize, frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 samples to split, got {n}")));
    }
    let n_val = ((frac * n as f64).round() as usize).clamp(1, n - 1);
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by_key(|&i| (key(seed, stream::SPLIT, i as u64, 0), i));
    let mut val = ranked[..n_val].to_vec();
    let mut train = ranked[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// F1 at threshold 0.5; absent when undefined.
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochCriterion {
    ValF1,
    /// Fallback when no validation mask contains a positive pixel.
    ValLoss,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: FcnWeights<f32>,
    pub threshold: ThresholdChoice,
    pub best_epoch: usize,
    pub criterion: EpochCriterion,
    pub history: Vec<EpochLog>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

fn check_uniform(samples: &[TrainSample]) -> Result<(usize, usize, usize)> {
    let first = samples.first().ok_or_else(|| Error::Config("no training samples".into()))?;
    let dims = (first.channels, first.height, first.width);
    for (i, s) in samples.iter().enumerate() {
        if (s.channels, s.height, s.width) != dims
            || s.inputs.len() != s.channels * s.height * s.width
            || s.mask.len() != s.height * s.width
        {
            return Err(Error::Shape(format!(
                "sample {i} is {}x{}x{}, expected {}x{}x{}",
                s.channels, s.height, s.width, dims.0, dims.1, dims.2
            )));
        }
    }
    Ok(dims)
}

/// Probabilities for each sample with running batch-norm statistics.
pub fn predict_samples(w: &FcnWeights<f32>, samples: &[&TrainSample]) -> Result<Vec<Vec<f32>>> {
    predict_logits(w, samples).map(|v| v.into_iter().map(|z| z.into_iter().map(sigmoid).collect()).collect())
}

fn predict_logits(w: &FcnWeights<f32>, samples: &[&TrainSample]) -> Result<Vec<Vec<f32>>> {
    samples
        .par_iter()
        .map(|s| {
            let x = Tensor4::new(1, s.channels, s.height, s.width, s.inputs.clone())?;
            Ok(w.logits(&x, BnMode::Running)?.into_data())
        })
        .collect()
}

struct Validation {
    loss: f64,
    f1: Option<f64>,
}

fn validate(w: &FcnWeights<f32>, val: &[&TrainSample], focal: &FocalConfig) -> Result<Validation> {
    let logits = predict_logits(w, val)?;
    let z: Vec<f32> = logits.concat();
    let y: Vec<u8> = val.iter().flat_map(|s| s.mask.iter().copied()).collect();
    let loss = focal_loss_logits(&z, &y, focal)?;
    let p: Vec<f32> = z.iter().map(|&v| sigmoid(v)).collect();
    let f1 = counts_at(&p, &y, 0.5).f1().ok();
    Ok(Validation { loss, f1 })
}

pub fn train(samples: &[TrainSample], cfg: &TrainConfig, focal: &FocalConfig) -> Result<TrainOutcome> {
    train_with_observer(samples, cfg, focal, |_| {})
}

/// Trains from a seeded initialization; `observe` sees each epoch's log
/// entry as soon as it is available.
pub fn train_with_observer(
    samples: &[TrainSample],
    cfg: &TrainConfig,
    focal: &FocalConfig,
    mut observe: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    focal.validate()?;
    let (c, h, w) = check_uniform(samples)?;
    let (train_idx, val_idx) = validation_split(samples.len(), cfg.val_fraction, cfg.seed)?;
    let val: Vec<&TrainSample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let criterion = if val.iter().any(|s| s.mask.iter().any(|&m| m != 0)) {
        EpochCriterion::ValF1
    } else {
        log::warn!("validation masks contain no positive pixel; selecting the epoch by validation loss");
        EpochCriterion::ValLoss
    };

    let mut weights = FcnWeights::<f32>::init(c, cfg.seed);
    let mut opt = OptimizerState::new(c);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Option<f64>, f64, FcnWeights<f32>)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_for(cfg.seed, stream::SHUFFLE, epoch as u64, 0));
        let mut loss_sum = 0.0;
        let mut pixels = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<(Vec<f32>, Vec<u8>)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    match &cfg.augment {
                        Some(a) => augment_arrays(&s.inputs, c, &s.mask, h, w, a, &mut a.rng(epoch as u64, i as u64)),
                        None => (s.inputs.clone(), s.mask.clone()),
                    }
                })
                .collect();
            let refs: Vec<&[f32]> = items.iter().map(|(x, _)| x.as_slice()).collect();
            let x = Tensor4::stack(&refs, c, h, w)?;
            let y: Vec<u8> = items.iter().flat_map(|(_, m)| m.iter().copied()).collect();
            let (loss, grads, stats) = weights.loss_and_grad(&x, &y, focal)?;
            weights.update_running(&stats);
            opt.step(&mut weights.params, &grads, &cfg.adam);
            loss_sum += loss * y.len() as f64;
            pixels += y.len();
        }
        let v = validate(&weights, &val, focal)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / pixels as f64,
            val_loss: v.loss,
            val_f1: v.f1,
        };
        log::info!(
            "epoch {epoch}: train loss {:.6}, val loss {:.6}, val F1@0.5 {}",
            entry.train_loss,
            entry.val_loss,
            entry.val_f1.map_or("n/a".to_string(), |f| format!("{f:.4}"))
        );
        observe(&entry);
        let better = match (&best, criterion) {
            (None, _) => true,
            (Some((_, bf, bl, _)), EpochCriterion::ValF1) => {
                let (f, bf) = (v.f1.unwrap_or(0.0), bf.unwrap_or(0.0));
                f > bf || (f == bf && v.loss < *bl)
            }
            (Some((_, _, bl, _)), EpochCriterion::ValLoss) => v.loss < *bl,
        };
        if better {
            best = Some((epoch, v.f1, v.loss, weights.clone()));
        }
        history.push(entry);
    }

    let (best_epoch, _, _, weights) = best.expect("at least one epoch");
    let probs = predict_samples(&weights, &val)?.concat();
    let masks: Vec<u8> = val.iter().flat_map(|s| s.mask.iter().copied()).collect();
    let threshold = select_threshold(&probs, &masks, &cfg.threshold_grid)?;
    Ok(TrainOutcome {
        weights,
        threshold,
        best_epoch,
        criterion,
        history,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}
