//! Segmentation, discriminator and adversarial losses, and the weighted
//! training objective assembled from them (used here as a monitoring value).

use serde::{Deserialize, Serialize};

use super::{FineMask, MaskProbabilities, RasterError, MASK_CLASSES};
use crate::heatmap::{adaptive_wing_loss, AWingParams, Heatmap};

/// Probabilities are clamped into `[FLOOR, 1 − FLOOR]` before any logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

fn floor(p: f64) -> f64 {
    p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
}

/// Mean per-pixel `−ln p[label]` over a channel-major probability buffer,
/// with its gradient. Pixels whose probability is at the floor get zero
/// gradient.
pub fn mask_cross_entropy_raw(
    probs: &[f64],
    labels: &[u8],
) -> Result<(f64, Vec<f64>), RasterError> {
    let n = labels.len();
    if probs.len() != MASK_CLASSES * n {
        return Err(RasterError::ShapeMismatch(format!(
            "{} probabilities for {n} pixels",
            probs.len()
        )));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let mut grad = vec![0.0; probs.len()];
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= MASK_CLASSES {
            return Err(RasterError::BadLabel(l));
        }
        let idx = l as usize * n + i;
        let p = probs[idx];
        let pf = p.max(PROBABILITY_FLOOR);
        total -= pf.ln();
        if p > PROBABILITY_FLOOR {
            grad[idx] = -1.0 / (p * n as f64);
        }
    }
    Ok((total / n as f64, grad))
}

pub fn mask_cross_entropy(
    pred: &MaskProbabilities,
    target: &FineMask,
) -> Result<(f64, Vec<f64>), RasterError> {
    if pred.height != target.height || pred.width != target.width {
        return Err(RasterError::ShapeMismatch(format!(
            "prediction {}x{} vs mask {}x{}",
            pred.height, pred.width, target.height, target.width
        )));
    }
    mask_cross_entropy_raw(&pred.data, &target.labels)
}

/// `−mean[ln D(source) + ln(1 − D(target))]`: source pixels pushed toward
/// label 1, target pixels toward 0.
pub fn discriminator_bce(d_on_source: &[f64], d_on_target: &[f64]) -> Result<f64, RasterError> {
    if d_on_source.len() != d_on_target.len() {
        return Err(RasterError::ShapeMismatch(format!(
            "{} source vs {} target values",
            d_on_source.len(),
            d_on_target.len()
        )));
    }
    if d_on_source.is_empty() {
        return Err(RasterError::EmptyBatch);
    }
    let sum: f64 = d_on_source
        .iter()
        .zip(d_on_target)
        .map(|(&s, &t)| floor(s).ln() + (1.0 - floor(t)).ln())
        .sum();
    Ok(-sum / d_on_source.len() as f64)
}

/// `−mean ln D(target)`: small when target predictions pass as source.
pub fn adversarial_loss(d_on_target: &[f64]) -> Result<f64, RasterError> {
    if d_on_target.is_empty() {
        return Err(RasterError::EmptyBatch);
    }
    let sum: f64 = d_on_target.iter().map(|&t| floor(t).ln()).sum();
    Ok(-sum / d_on_target.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub lambda_m: f64,
    pub lambda_a: f64,
    #[serde(default)]
    pub awing: AWingParams,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            lambda_m: 1.0,
            lambda_a: 0.01,
            awing: AWingParams::default(),
        }
    }
}

/// A labeled sample: ground-truth heatmap and mask with the predictions.
#[derive(Debug, Clone, Copy)]
pub struct SourceSample<'a> {
    pub heatmap: &'a Heatmap,
    pub heatmap_pred: &'a Heatmap,
    pub mask: &'a FineMask,
    pub mask_pred: &'a MaskProbabilities,
}

/// An unlabeled sample. `pseudo` is absent for samples whose pose is the
/// zero sentinel; they then contribute only the adversarial term.
#[derive(Debug, Clone, Copy)]
pub struct TargetSample<'a> {
    pub pseudo: Option<(&'a Heatmap, &'a FineMask)>,
    pub heatmap_pred: &'a Heatmap,
    pub mask_pred: &'a MaskProbabilities,
    pub discriminator: Option<&'a [f64]>,
}

impl SourceSample<'_> {
    pub fn term(&self, w: &ObjectiveWeights) -> Result<f64, RasterError> {
        let lh = adaptive_wing_loss(self.heatmap_pred, self.heatmap, &w.awing)
            .map_err(|e| RasterError::ShapeMismatch(e.to_string()))?
            .0;
        let lm = mask_cross_entropy(self.mask_pred, self.mask)?.0;
        Ok(lh + w.lambda_m * lm)
    }
}

impl TargetSample<'_> {
    pub fn term(&self, w: &ObjectiveWeights) -> Result<f64, RasterError> {
        let mut total = 0.0;
        if let Some((heatmap, mask)) = self.pseudo {
            total += adaptive_wing_loss(self.heatmap_pred, heatmap, &w.awing)
                .map_err(|e| RasterError::ShapeMismatch(e.to_string()))?
                .0;
            total += w.lambda_m * mask_cross_entropy(self.mask_pred, mask)?.0;
        }
        if let Some(d) = self.discriminator {
            total += w.lambda_a * adversarial_loss(d)?;
        }
        Ok(total)
    }
}

/// Source mean of `L_h + λ_m·L_m` plus target mean of
/// `L_h + λ_m·L_m + λ_a·L_adv`. An empty side contributes nothing; both
/// empty is an error.
pub fn total_objective(
    source: &[SourceSample<'_>],
    target: &[TargetSample<'_>],
    weights: &ObjectiveWeights,
) -> Result<f64, RasterError> {
    if source.is_empty() && target.is_empty() {
        return Err(RasterError::EmptyBatch);
    }
    let mean = |terms: Vec<f64>| {
        if terms.is_empty() {
            0.0
        } else {
            terms.iter().sum::<f64>() / terms.len() as f64
        }
    };
    let s = source
        .iter()
        .map(|x| x.term(weights))
        .collect::<Result<Vec<_>, _>>()?;
    let t = target
        .iter()
        .map(|x| x.term(weights))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(s) + mean(t))
}
