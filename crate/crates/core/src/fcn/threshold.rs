use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ConfusionCounts;

/// 0.05, 0.10, ..., 0.95.
pub fn default_grid() -> Vec<f32> {
    (1..=19).map(|k| k as f32 / 20.0).collect()
}

/// Counts of `prob > tau` against the reference.
pub fn counts_at(probs: &[f32], masks: &[u8], tau: f32) -> ConfusionCounts {
    let mut c = [0u64; 4];
    for (&p, &t) in probs.iter().zip(masks) {
        c[((p > tau) as usize) << 1 | (t != 0) as usize] += 1;
    }
    ConfusionCounts::new(c[3], c[2], c[0], c[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdCriterion {
    F1,
    /// Used when the reference has no positive pixel and F1 is undefined.
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub tau: f32,
    pub score: f64,
    pub criterion: ThresholdCriterion,
}

/// Grid value maximizing F1 of `prob > tau`; ties go to the smallest value.
/// Grid order does not matter.
pub fn select_threshold(probs: &[f32], masks: &[u8], grid: &[f32]) -> Result<ThresholdChoice> {
    if grid.is_empty() || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Config("threshold grid must be non-empty and finite".into()));
    }
    if probs.len() != masks.len() {
        return Err(Error::Shape(format!("{} probabilities for {} reference pixels", probs.len(), masks.len())));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f32::total_cmp);
    sorted.dedup();
    let criterion = if masks.iter().any(|&m| m != 0) {
        ThresholdCriterion::F1
    } else {
        ThresholdCriterion::Accuracy
    };
    let mut best: Option<ThresholdChoice> = None;
    for &tau in &sorted {
        let c = counts_at(probs, masks, tau);
        let score = match criterion {
            ThresholdCriterion::F1 => c.f1(),
            ThresholdCriterion::Accuracy => c.accuracy(),
        }
        .unwrap_or(0.0);
        if best.map_or(true, |b| score > b.score) {
            best = Some(ThresholdChoice { tau, score, criterion });
        }
    }
    Ok(best.expect("grid is non-empty"))
}
