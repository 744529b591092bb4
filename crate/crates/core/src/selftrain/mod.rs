//! Pseudo-label generation and the self-training round orchestrator.
//!
//! A round first labels every target sample from the current predictor
//! (decode, PnP, accept on inlier count) and then hands the accepted subset
//! to [`Predictor::train_update`]. The round-0 predictor state is the
//! pretrained network; every round regenerates all labels.

mod synthetic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    project_points, CameraIntrinsics, LabeledMesh, LandmarkSet, Pose, RigidPose,
};
use crate::heatmap::{decode_heatmap, encode_heatmap, Heatmap};
use crate::metrics::{pose_score, rotation_error_deg, translation_error, ScoreThresholds};
use crate::pnp::{ransac_pnp, Correspondence, RansacParams};
use crate::rasterizer::{render_mask, FineMask, MaskProbabilities, ObjectiveWeights, TargetSample};

pub use synthetic::{
    sample_visible_poses, Checkpoint, SyntheticParams, SyntheticPredictor, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelfTrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown sample id {0:?}")]
    UnknownSample(String),
    #[error("sample {0:?} has no ground-truth pose")]
    MissingGroundTruth(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("prediction failed for {id:?}: {reason}")]
    Prediction { id: String, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One target-domain sample. The ground truth is only read for reporting
/// and by simulated predictors; the labeling loop never sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub ground_truth: Option<RigidPose>,
}

/// Network outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub heatmap: Heatmap,
    pub mask: MaskProbabilities,
    /// Per-pixel discriminator output on this target image, if modeled.
    pub discriminator: Option<Vec<f64>>,
}

/// The trainable network behind the loop. `predict` must be deterministic
/// for a fixed state and id.
pub trait Predictor: Sync {
    fn predict(&self, id: &str) -> Result<Prediction, SelfTrainError>;
    fn train_update(&mut self, accepted: &[&PseudoLabel]);
}

/// Fixed geometry shared by every sample: landmarks, mesh and camera.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub landmarks: &'a LandmarkSet,
    pub mesh: &'a LabeledMesh,
    pub camera: &'a CameraIntrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelParams {
    /// Minimum inlier count `N_th` for accepting a pseudo-pose.
    pub n_th: usize,
    /// Gaussian width of pseudo heatmaps in heatmap pixels.
    pub heatmap_sigma: f64,
    /// Keypoints with peak confidence below this are dropped before PnP.
    /// Channels with zero peak are always dropped.
    pub min_confidence: Option<f64>,
    pub ransac: RansacParams,
}

impl Default for LabelParams {
    fn default() -> Self {
        LabelParams {
            n_th: 8,
            heatmap_sigma: 2.0,
            min_confidence: None,
            ransac: RansacParams::default(),
        }
    }
}

impl LabelParams {
    pub fn validate(&self) -> Result<(), SelfTrainError> {
        let bad = |m: String| Err(SelfTrainError::InvalidConfig(m));
        if self.n_th == 0 {
            return bad("n_th must be >= 1".into());
        }
        if !(self.heatmap_sigma > 0.0 && self.heatmap_sigma.is_finite()) {
            return bad(format!(
                "heatmap sigma must be positive, got {}",
                self.heatmap_sigma
            ));
        }
        if let Some(c) = self.min_confidence {
            if !(0.0..=1.0).contains(&c) {
                return bad(format!("min_confidence must lie in [0, 1], got {c}"));
            }
        }
        self.ransac
            .validate()
            .map_err(|e| SelfTrainError::InvalidConfig(e.to_string()))
    }
}

/// Label of one target sample for one round.
///
/// `pose` is valid exactly when `accepted`, and then the pseudo heatmap and
/// mask are the projection and rendering of that pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub sample_id: String,
    pub pose: Pose,
    pub pseudo_heatmap: Option<Heatmap>,
    pub pseudo_mask: Option<FineMask>,
    pub n_in: usize,
    pub accepted: bool,
}

/// Pseudo heatmap and mask for `pose`: the landmark projections encoded at
/// `stride`, and the mesh rendered at the camera resolution.
pub fn geometric_labels(
    pose: &RigidPose,
    scene: &Scene<'_>,
    stride: u32,
    sigma: f64,
) -> Result<(Heatmap, FineMask), SelfTrainError> {
    let k = scene.camera;
    let proj = project_points(pose, scene.landmarks.points(), k)
        .map_err(|e| SelfTrainError::ShapeMismatch(e.to_string()))?;
    let kps: Vec<(f64, f64)> = proj.iter().map(|p| (p.u, p.v)).collect();
    let heatmap = encode_heatmap(&kps, k.height, k.width, stride, sigma)
        .map_err(|e| SelfTrainError::ShapeMismatch(e.to_string()))?;
    let (mask, _) = render_mask(pose, scene.mesh, k, k.height as usize, k.width as usize);
    Ok((heatmap, mask))
}

fn rejected(id: &str, n_in: usize) -> PseudoLabel {
    PseudoLabel {
        sample_id: id.to_string(),
        pose: Pose::Zero,
        pseudo_heatmap: None,
        pseudo_mask: None,
        n_in,
        accepted: false,
    }
}

/// Decodes `pred`, solves PnP on the surviving keypoints and accepts the
/// pose when its inlier count reaches `n_th`. Every solver failure becomes
/// a rejection; only a channel-count mismatch is an error.
pub fn generate_pseudo_label(
    id: &str,
    pred: &Heatmap,
    scene: &Scene<'_>,
    params: &LabelParams,
) -> Result<PseudoLabel, SelfTrainError> {
    if pred.channels() != scene.landmarks.len() {
        return Err(SelfTrainError::ShapeMismatch(format!(
            "{} heatmap channels for {} landmarks",
            pred.channels(),
            scene.landmarks.len()
        )));
    }
    let floor = params.min_confidence.unwrap_or(0.0);
    let corrs: Vec<Correspondence> = decode_heatmap(pred)
        .iter()
        .zip(scene.landmarks.points())
        .filter(|(kp, _)| kp.confidence > 0.0 && kp.confidence >= floor)
        .map(|(kp, &p)| {
            Correspondence::new(nalgebra::Vector2::new(kp.u, kp.v), p)
                .with_confidence(kp.confidence)
        })
        .collect();
    let Ok(result) = ransac_pnp(&corrs, scene.camera, &params.ransac) else {
        return Ok(rejected(id, 0));
    };
    if result.n_in < params.n_th {
        return Ok(rejected(id, result.n_in));
    }
    let Ok((heatmap, mask)) =
        geometric_labels(&result.pose, scene, pred.stride(), params.heatmap_sigma)
    else {
        // a landmark behind the camera cannot be encoded
        return Ok(rejected(id, 0));
    };
    Ok(PseudoLabel {
        sample_id: id.to_string(),
        pose: Pose::Valid(result.pose),
        pseudo_heatmap: Some(heatmap),
        pseudo_mask: Some(mask),
        n_in: result.n_in,
        accepted: true,
    })
}

/// Mixes a global seed with a sample id so per-sample randomness does not
/// depend on scheduling order.
pub fn sample_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the id, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundConfig {
    pub label: LabelParams,
    pub weights: ObjectiveWeights,
    pub thresholds: ScoreThresholds,
    /// Per-sample RANSAC seeds derive from this and the sample id.
    pub seed: u64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            label: LabelParams::default(),
            weights: ObjectiveWeights::default(),
            thresholds: ScoreThresholds::default(),
            seed: RansacParams::default().rng_seed,
        }
    }
}

/// Errors of an accepted pseudo-pose against the hidden ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleErrors {
    pub rotation_deg: f64,
    pub translation_m: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean_rotation_deg: f64,
    pub median_rotation_deg: f64,
    pub mean_translation_m: f64,
    pub median_translation_m: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Over accepted samples with ground truth; `None` if there are none.
    pub errors: Option<ErrorSummary>,
    /// Target-side training objective under the labels of this round.
    pub objective: f64,
    pub labels: Vec<PseudoLabel>,
    /// Parallel to `labels`; present for accepted samples with ground truth.
    pub sample_errors: Vec<Option<SampleErrors>>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(errs: &[Option<SampleErrors>]) -> Option<ErrorSummary> {
    let present: Vec<&SampleErrors> = errs.iter().flatten().collect();
    if present.is_empty() {
        return None;
    }
    let n = present.len() as f64;
    let rot: Vec<f64> = present.iter().map(|e| e.rotation_deg).collect();
    let tra: Vec<f64> = present.iter().map(|e| e.translation_m).collect();
    Some(ErrorSummary {
        mean_rotation_deg: rot.iter().sum::<f64>() / n,
        mean_translation_m: tra.iter().sum::<f64>() / n,
        mean_score: present.iter().map(|e| e.score).sum::<f64>() / n,
        median_rotation_deg: median(rot),
        median_translation_m: median(tra),
    })
}

fn sample_errors(
    label: &PseudoLabel,
    truth: Option<&RigidPose>,
    thresholds: &ScoreThresholds,
) -> Option<SampleErrors> {
    let (est, gt) = (label.pose.as_valid()?, truth?);
    let q = (est.rotation.to_array(), gt.rotation.to_array());
    let t = (est.translation.into(), gt.translation.into());
    let score = pose_score(&q.0, &q.1, &t.0, &t.1, thresholds).ok()?;
    Some(SampleErrors {
        rotation_deg: rotation_error_deg(&q.0, &q.1).ok()?,
        translation_m: translation_error(&t.0, &t.1),
        score: score.score_rad,
    })
}

/// One round: label every sample from the current predictor state, report,
/// then update the predictor on the accepted subset.
pub fn run_round<P: Predictor>(
    round: usize,
    dataset: &[Sample],
    predictor: &mut P,
    scene: &Scene<'_>,
    config: &RoundConfig,
) -> Result<RoundReport, SelfTrainError> {
    if dataset.is_empty() {
        return Err(SelfTrainError::EmptyDataset);
    }
    config.label.validate()?;
    let shared: &P = predictor;
    let results = dataset
        .par_iter()
        .map(|sample| {
            let pred = shared.predict(&sample.id)?;
            let mut params = config.label;
            params.ransac.rng_seed = sample_seed(config.seed, &sample.id);
            let label = generate_pseudo_label(&sample.id, &pred.heatmap, scene, &params)?;
            let target = TargetSample {
                pseudo: label
                    .pseudo_heatmap
                    .as_ref()
                    .zip(label.pseudo_mask.as_ref()),
                heatmap_pred: &pred.heatmap,
                mask_pred: &pred.mask,
                discriminator: pred.discriminator.as_deref(),
            };
            let term = target
                .term(&config.weights)
                .map_err(|e| SelfTrainError::ShapeMismatch(e.to_string()))?;
            let errs = sample_errors(&label, sample.ground_truth.as_ref(), &config.thresholds);
            Ok((label, term, errs))
        })
        .collect::<Result<Vec<_>, SelfTrainError>>()?;

    let total = results.len();
    let objective = results.iter().map(|r| r.1).sum::<f64>() / total as f64;
    let (labels, sample_errors): (Vec<_>, Vec<_>) =
        results.into_iter().map(|(l, _, e)| (l, e)).unzip();
    let accepted = labels.iter().filter(|l| l.accepted).count();
    let report = RoundReport {
        round,
        total,
        accepted,
        rejected: total - accepted,
        errors: summarize(&sample_errors),
        objective,
        labels,
        sample_errors,
    };
    let accepted_labels: Vec<&PseudoLabel> = report.labels.iter().filter(|l| l.accepted).collect();
    if !accepted_labels.is_empty() {
        predictor.train_update(&accepted_labels);
    }
    Ok(report)
}

/// Runs rounds `first_round .. first_round + rounds` in sequence, threading
/// the predictor state. `on_round` sees each report together with the
/// updated predictor, which is the hook for checkpointing.
pub fn run_self_training<P: Predictor>(
    dataset: &[Sample],
    predictor: &mut P,
    scene: &Scene<'_>,
    config: &RoundConfig,
    first_round: usize,
    rounds: usize,
    mut on_round: impl FnMut(&RoundReport, &P) -> Result<(), SelfTrainError>,
) -> Result<Vec<RoundReport>, SelfTrainError> {
    if rounds == 0 {
        return Err(SelfTrainError::InvalidConfig("rounds must be >= 1".into()));
    }
    let mut reports = Vec::with_capacity(rounds);
    for round in first_round..first_round + rounds {
        let report = run_round(round, dataset, predictor, scene, config)?;
        on_round(&report, predictor)?;
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rigid_distance, Quaternion, Vec3};
    use crate::model;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(996.0, 996.0, 320.0, 200.0, 640, 400).unwrap()
    }

    fn known_pose() -> RigidPose {
        let q = Quaternion::from_axis_angle(&Vec3::new(0.3, 1.0, -0.2), 0.8).unwrap();
        RigidPose::new(q, Vec3::new(0.1, -0.05, 6.0)).unwrap()
    }

    fn exact_heatmap(pose: &RigidPose, scene: &Scene<'_>) -> Heatmap {
        geometric_labels(pose, scene, 4, 2.0).unwrap().0
    }

    #[test]
    fn exact_heatmap_is_accepted_and_reproduced() {
        let (lm, mesh, k) = (model::landmarks(), model::mesh(), camera());
        let scene = Scene {
            landmarks: &lm,
            mesh: &mesh,
            camera: &k,
        };
        let pose = known_pose();
        let h = exact_heatmap(&pose, &scene);
        let label = generate_pseudo_label("a", &h, &scene, &LabelParams::default()).unwrap();
        assert!(label.accepted);
        assert_eq!(label.n_in, 11);
        let est = label.pose.as_valid().unwrap();
        let (dr, dt) = rigid_distance(est, &pose);
        assert!(dr < 1e-6 && dt < 1e-6, "{dr} {dt}");
        let (h2, m2) = geometric_labels(est, &scene, 4, 2.0).unwrap();
        assert_eq!(label.pseudo_heatmap.as_ref().unwrap().data(), h2.data());
        assert_eq!(label.pseudo_mask.as_ref().unwrap(), &m2);
    }

    #[test]
    fn four_undetectable_keypoints_reject() {
        let (lm, mesh, k) = (model::landmarks(), model::mesh(), camera());
        let scene = Scene {
            landmarks: &lm,
            mesh: &mesh,
            camera: &k,
        };
        let mut h = exact_heatmap(&known_pose(), &scene);
        for c in [0, 3, 6, 9] {
            h.clear_channel(c);
        }
        let label = generate_pseudo_label("a", &h, &scene, &LabelParams::default()).unwrap();
        assert_eq!(label.n_in, 7);
        assert!(!label.accepted);
        assert_eq!(label.pose, Pose::Zero);
        assert!(label.pseudo_heatmap.is_none() && label.pseudo_mask.is_none());
    }

    #[test]
    fn empty_heatmap_rejects_with_zero_inliers() {
        let (lm, mesh, k) = (model::landmarks(), model::mesh(), camera());
        let scene = Scene {
            landmarks: &lm,
            mesh: &mesh,
            camera: &k,
        };
        let h = Heatmap::zeros(11, 100, 160, 4);
        let label = generate_pseudo_label("a", &h, &scene, &LabelParams::default()).unwrap();
        assert_eq!((label.n_in, label.accepted), (0, false));
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let (lm, mesh, k) = (model::landmarks(), model::mesh(), camera());
        let scene = Scene {
            landmarks: &lm,
            mesh: &mesh,
            camera: &k,
        };
        let h = Heatmap::zeros(3, 100, 160, 4);
        assert!(matches!(
            generate_pseudo_label("a", &h, &scene, &LabelParams::default()),
            Err(SelfTrainError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn confidence_pruning_drops_weak_keypoints() {
        let (lm, mesh, k) = (model::landmarks(), model::mesh(), camera());
        let scene = Scene {
            landmarks: &lm,
            mesh: &mesh,
            camera: &k,
        };
        let h = exact_heatmap(&known_pose(), &scene);
        let mut data = h.data().to_vec();
        let n = h.height() * h.width();
        for v in &mut data[..4 * n] {
            *v *= 0.3;
        }
        let weak = Heatmap::from_raw(11, h.height(), h.width(), 4, data).unwrap();
        let params = LabelParams {
            min_confidence: Some(0.5),
            ..Default::default()
        };
        let label = generate_pseudo_label("a", &weak, &scene, &params).unwrap();
        assert_eq!(label.n_in, 7);
        let label = generate_pseudo_label("a", &weak, &scene, &LabelParams::default()).unwrap();
        assert_eq!(label.n_in, 11);
    }

    #[test]
    fn sample_seed_is_stable_and_spread() {
        assert_eq!(
            sample_seed(1, "img000001.jpg"),
            sample_seed(1, "img000001.jpg")
        );
        assert_ne!(
            sample_seed(1, "img000001.jpg"),
            sample_seed(1, "img000002.jpg")
        );
        assert_ne!(sample_seed(1, "a"), sample_seed(2, "a"));
    }
}
