//! Pose scoring: rotation and translation errors, the thresholded per-image
//! score and dataset aggregation.
//!
//! The summed score adds a rotation error to a dimensionless translation
//! ratio. Both the degree and radian forms of the rotation term are kept;
//! [`AngleConvention`] selects which one is summed when reporting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("ground-truth translation has zero norm")]
    ZeroGroundTruthTranslation,
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("no scores to aggregate")]
    EmptyInput,
}

/// Rotation threshold in degrees below which the rotation term may vanish.
pub const THETA_Q_DEG: f64 = 0.169;
/// Relative translation threshold.
pub const THETA_T: f64 = 2.173e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleConvention {
    #[default]
    Radians,
    Degrees,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreThresholds {
    pub theta_q_deg: f64,
    pub theta_t: f64,
}

impl Default for ScoreThresholds {
    fn default() -> Self {
        ScoreThresholds {
            theta_q_deg: THETA_Q_DEG,
            theta_t: THETA_T,
        }
    }
}

fn unit(q: &[f64; 4]) -> Result<[f64; 4], MetricsError> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || n == 0.0 {
        return Err(MetricsError::DegenerateQuaternion);
    }
    Ok(q.map(|v| v / n))
}

/// `2·arccos(|q̂·q|)` in degrees, evaluated as `4·atan2(‖q̂ − s·q‖, ‖q̂ + s·q‖)`
/// with `s = sign(q̂·q)`, which is exact for `q̂ = ±q` and well conditioned
/// near zero. `q` and `−q` score as the same rotation.
pub fn rotation_error_deg(q_hat: &[f64; 4], q: &[f64; 4]) -> Result<f64, MetricsError> {
    let (a, b) = (unit(q_hat)?, unit(q)?);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let s = if dot < 0.0 { -1.0 } else { 1.0 };
    let norm = |sign: f64| {
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x + sign * y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    Ok((4.0 * norm(-s).atan2(norm(s))).to_degrees())
}

/// `‖t̂ − t‖₂` in meters.
pub fn translation_error(t_hat: &[f64; 3], t: &[f64; 3]) -> f64 {
    t_hat
        .iter()
        .zip(t)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// `‖t̂ − t‖ / ‖t‖`.
pub fn relative_translation_error(t_hat: &[f64; 3], t: &[f64; 3]) -> Result<f64, MetricsError> {
    let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(MetricsError::ZeroGroundTruthTranslation);
    }
    Ok(translation_error(t_hat, t) / norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseScore {
    pub e_q_deg: f64,
    pub e_t: f64,
    pub s_q_deg: f64,
    pub s_q_rad: f64,
    pub s_t: f64,
    /// Zero when both terms are strictly under threshold, else `s_q_rad + s_t`.
    pub score_rad: f64,
    /// Same rule with the rotation term in degrees.
    pub score_deg: f64,
}

impl PoseScore {
    pub fn score(&self, convention: AngleConvention) -> f64 {
        match convention {
            AngleConvention::Radians => self.score_rad,
            AngleConvention::Degrees => self.score_deg,
        }
    }

    pub fn is_zeroed(&self) -> bool {
        self.score_rad == 0.0
    }
}

pub fn pose_score(
    q_hat: &[f64; 4],
    q: &[f64; 4],
    t_hat: &[f64; 3],
    t: &[f64; 3],
    thresholds: &ScoreThresholds,
) -> Result<PoseScore, MetricsError> {
    let e_q_deg = rotation_error_deg(q_hat, q)?;
    let s_t = relative_translation_error(t_hat, t)?;
    let s_q_rad = e_q_deg.to_radians();
    let zeroed = e_q_deg < thresholds.theta_q_deg && s_t < thresholds.theta_t;
    Ok(PoseScore {
        e_q_deg,
        e_t: translation_error(t_hat, t),
        s_q_deg: e_q_deg,
        s_q_rad,
        s_t,
        score_rad: if zeroed { 0.0 } else { s_q_rad + s_t },
        score_deg: if zeroed { 0.0 } else { e_q_deg + s_t },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub scored: usize,
    /// Samples without a pose prediction; never averaged in.
    pub no_prediction: usize,
    pub mean_e_t: f64,
    pub mean_e_q_deg: f64,
    pub mean_s: f64,
    pub median_s: f64,
    pub fraction_zero: f64,
    pub convention: AngleConvention,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregates per-sample scores; `None` entries count as no-prediction.
pub fn aggregate(
    scores: &[Option<PoseScore>],
    convention: AngleConvention,
) -> Result<ScoreSummary, MetricsError> {
    let present: Vec<&PoseScore> = scores.iter().flatten().collect();
    if present.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = present.len() as f64;
    let mut s: Vec<f64> = present.iter().map(|p| p.score(convention)).collect();
    Ok(ScoreSummary {
        scored: present.len(),
        no_prediction: scores.len() - present.len(),
        mean_e_t: present.iter().map(|p| p.e_t).sum::<f64>() / n,
        mean_e_q_deg: present.iter().map(|p| p.e_q_deg).sum::<f64>() / n,
        mean_s: s.iter().sum::<f64>() / n,
        median_s: median(&mut s),
        fraction_zero: present.iter().filter(|p| p.is_zeroed()).count() as f64 / n,
        convention,
    })
}
