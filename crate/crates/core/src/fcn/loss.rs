use serde::{Deserialize, Serialize};

use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "focal loss needs alpha in [0, 1] and gamma >= 0, got {} and {}",
                self.alpha, self.gamma
            )));
        }
        Ok(())
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Loss of one pixel and its derivative with respect to the logit `z`.
///
/// With `s = +1` for positives and `-1` for negatives, `log p_t = -softplus(-s z)`
/// and `1 - p_t = exp(-softplus(s z))`, both finite for any finite `z`.
pub fn focal_terms<T: Real>(z: T, y: u8, cfg: &FocalConfig) -> (T, T) {
    let (s, alpha_t) = if y != 0 {
        (T::one(), T::of(cfg.alpha))
    } else {
        (-T::one(), T::of(1.0 - cfg.alpha))
    };
    let gamma = T::of(cfg.gamma);
    let log_pt = -softplus(-s * z);
    let q = (-softplus(s * z)).exp();
    let pt = log_pt.exp();
    let qg = if cfg.gamma == 2.0 { q * q } else { q.powf(gamma) };
    let loss = -alpha_t * qg * log_pt;
    let grad = alpha_t * s * qg * (gamma * pt * log_pt - q);
    (loss, grad)
}

/// Mean focal loss of logits against 0/1 targets.
pub fn focal_loss_logits<T: Real>(z: &[T], y: &[u8], cfg: &FocalConfig) -> Result<f64> {
    if z.len() != y.len() || z.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} targets", z.len(), y.len())));
    }
    let total: f64 = z
        .iter()
        .zip(y)
        .map(|(&zi, &yi)| focal_terms(zi, yi, cfg).0.to_f64().unwrap())
        .sum();
    Ok(total / z.len() as f64)
}

/// Mean focal loss of probabilities; `log` is guarded by clamping `p_t`.
pub fn focal_loss(p: &[f32], y: &[u8], cfg: &FocalConfig) -> Result<f64> {
    if p.len() != y.len() || p.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} targets", p.len(), y.len())));
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let pi = pi as f64;
            let (pt, alpha_t) = if yi != 0 { (pi, cfg.alpha) } else { (1.0 - pi, 1.0 - cfg.alpha) };
            -alpha_t * (1.0 - pt).powf(cfg.gamma) * pt.max(1e-12).ln()
        })
        .sum();
    Ok(total / p.len() as f64)
}
