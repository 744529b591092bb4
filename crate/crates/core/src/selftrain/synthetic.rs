//! A simulated predictor whose keypoint noise shrinks with each update, and
//! helpers for building simulated datasets.

use std::collections::HashMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{sample_seed, Prediction, Predictor, PseudoLabel, Sample, Scene, SelfTrainError};
use crate::geometry::{
    project_points, CameraIntrinsics, LabeledMesh, LandmarkSet, Quaternion, RigidPose,
};
use crate::heatmap::encode_heatmap;
use crate::rasterizer::{render_mask, MaskProbabilities};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    /// Keypoint noise standard deviation in input pixels.
    pub sigma_px: f64,
    /// Probability that a keypoint is displaced by `outlier_px`.
    pub p_out: f64,
    pub outlier_px: f64,
    /// Per-update shrink factor for `sigma_px` and `p_out`, in `(0, 1)`.
    pub gamma: f64,
    /// Floor for `sigma_px`; a smaller initial value is never raised.
    pub sigma_min: f64,
    pub stride: u32,
    pub heatmap_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            sigma_px: 6.0,
            p_out: 0.3,
            outlier_px: 40.0,
            gamma: 0.5,
            sigma_min: 0.1,
            stride: 4,
            heatmap_sigma: 2.0,
            seed: 2023,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<(), SelfTrainError> {
        let bad = |m: String| Err(SelfTrainError::InvalidConfig(m));
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return bad(format!(
                "sigma_min must be positive, got {}",
                self.sigma_min
            ));
        }
        if !(self.sigma_px >= 0.0 && self.sigma_px.is_finite()) {
            return bad(format!(
                "sigma_px must be non-negative, got {}",
                self.sigma_px
            ));
        }
        if !(0.0..=1.0).contains(&self.p_out) {
            return bad(format!("p_out must lie in [0, 1], got {}", self.p_out));
        }
        if !(self.outlier_px >= 0.0 && self.outlier_px.is_finite()) {
            return bad(format!(
                "outlier_px must be non-negative, got {}",
                self.outlier_px
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.stride == 0 {
            return bad("stride must be >= 1".into());
        }
        if !(self.heatmap_sigma > 0.0 && self.heatmap_sigma.is_finite()) {
            return bad(format!(
                "heatmap sigma must be positive, got {}",
                self.heatmap_sigma
            ));
        }
        Ok(())
    }
}

/// Predicts from the hidden ground truth plus planted noise.
///
/// The noise draws for a sample depend only on the seed and the sample id,
/// so shrinking `sigma_px` and `p_out` scales the same displacements and
/// turns a subset of outliers back into inliers.
#[derive(Debug, Clone)]
pub struct SyntheticPredictor {
    params: SyntheticParams,
    sigma_px: f64,
    p_out: f64,
    updates: u64,
    truth: HashMap<String, RigidPose>,
    fingerprint: u64,
    landmarks: LandmarkSet,
    mesh: LabeledMesh,
    camera: CameraIntrinsics,
}

fn dataset_fingerprint(dataset: &[Sample]) -> u64 {
    dataset
        .iter()
        .fold(0x7361_7470_6f73_6521, |h, s| sample_seed(h, &s.id))
}

impl SyntheticPredictor {
    pub fn new(
        params: SyntheticParams,
        dataset: &[Sample],
        scene: &Scene<'_>,
    ) -> Result<Self, SelfTrainError> {
        params.validate()?;
        let truth = dataset
            .iter()
            .map(|s| {
                s.ground_truth
                    .map(|p| (s.id.clone(), p))
                    .ok_or_else(|| SelfTrainError::MissingGroundTruth(s.id.clone()))
            })
            .collect::<Result<HashMap<_, _>, _>>()?;
        Ok(SyntheticPredictor {
            params,
            sigma_px: params.sigma_px,
            p_out: params.p_out,
            updates: 0,
            truth,
            fingerprint: dataset_fingerprint(dataset),
            landmarks: scene.landmarks.clone(),
            mesh: scene.mesh.clone(),
            camera: *scene.camera,
        })
    }

    pub fn sigma_px(&self) -> f64 {
        self.sigma_px
    }

    pub fn p_out(&self) -> f64 {
        self.p_out
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Noisy keypoints for one sample in input pixels.
    pub fn keypoints(&self, id: &str) -> Result<Vec<(f64, f64)>, SelfTrainError> {
        let pose = self
            .truth
            .get(id)
            .ok_or_else(|| SelfTrainError::UnknownSample(id.to_string()))?;
        let proj = project_points(pose, self.landmarks.points(), &self.camera).map_err(|e| {
            SelfTrainError::Prediction {
                id: id.to_string(),
                reason: e.to_string(),
            }
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(self.params.seed, id));
        Ok(proj
            .iter()
            .map(|p| {
                let zu: f64 = rng.sample(StandardNormal);
                let zv: f64 = rng.sample(StandardNormal);
                let draw: f64 = rng.random();
                let phi = rng.random::<f64>() * TAU;
                let mut u = p.u + self.sigma_px * zu;
                let mut v = p.v + self.sigma_px * zv;
                if draw < self.p_out {
                    u += self.params.outlier_px * phi.cos();
                    v += self.params.outlier_px * phi.sin();
                }
                (u, v)
            })
            .collect())
    }

    /// Confidence the simulated segmentation head puts on the true label.
    fn mask_confidence(&self) -> f64 {
        1.0 - 0.5 * self.sigma_px / (self.sigma_px + 1.0)
    }

    /// Simulated discriminator output: approaches 0.5 as the noise reaches
    /// its floor.
    fn discriminator_value(&self) -> f64 {
        0.5 * self.params.sigma_min / self.sigma_px.max(self.params.sigma_min)
    }

    pub fn checkpoint(&self, next_round: usize) -> Checkpoint {
        Checkpoint {
            next_round: next_round as u64,
            seed: self.params.seed,
            fingerprint: self.fingerprint,
            updates: self.updates,
            sigma_px: self.sigma_px,
            p_out: self.p_out,
        }
    }

    /// Restores the learned state. The predictor must have been built from
    /// the same dataset and seed as the one that wrote the checkpoint.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<(), SelfTrainError> {
        if ck.seed != self.params.seed {
            return Err(SelfTrainError::Checkpoint(format!(
                "seed {} does not match predictor seed {}",
                ck.seed, self.params.seed
            )));
        }
        if ck.fingerprint != self.fingerprint {
            return Err(SelfTrainError::Checkpoint(
                "dataset differs from the checkpointed run".into(),
            ));
        }
        self.updates = ck.updates;
        self.sigma_px = ck.sigma_px;
        self.p_out = ck.p_out;
        Ok(())
    }
}

impl Predictor for SyntheticPredictor {
    fn predict(&self, id: &str) -> Result<Prediction, SelfTrainError> {
        let kps = self.keypoints(id)?;
        let k = &self.camera;
        let heatmap = encode_heatmap(
            &kps,
            k.height,
            k.width,
            self.params.stride,
            self.params.heatmap_sigma,
        )
        .map_err(|e| SelfTrainError::InvalidConfig(e.to_string()))?;
        let (mask, _) = render_mask(
            &self.truth[id],
            &self.mesh,
            k,
            k.height as usize,
            k.width as usize,
        );
        let cells = heatmap.height() * heatmap.width();
        Ok(Prediction {
            heatmap,
            mask: MaskProbabilities::from_mask(&mask, self.mask_confidence()),
            discriminator: Some(vec![self.discriminator_value(); cells]),
        })
    }

    fn train_update(&mut self, accepted: &[&PseudoLabel]) {
        if accepted.is_empty() {
            return;
        }
        if self.sigma_px > self.params.sigma_min {
            self.sigma_px = (self.sigma_px * self.params.gamma).max(self.params.sigma_min);
        }
        self.p_out *= self.params.gamma;
        self.updates += 1;
    }
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized predictor state between rounds. Little-endian layout:
/// magic, version `u32`, then `next_round`, `seed`, `fingerprint`,
/// `updates` as `u64` and `sigma_px`, `p_out` as `f64`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub next_round: u64,
    pub seed: u64,
    pub fingerprint: u64,
    pub updates: u64,
    pub sigma_px: f64,
    pub p_out: f64,
}

impl Checkpoint {
    const LEN: usize = 8 + 6 * 8;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [self.next_round, self.seed, self.fingerprint, self.updates] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.sigma_px.to_le_bytes());
        out.extend_from_slice(&self.p_out.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SelfTrainError> {
        let err = |m: &str| Err(SelfTrainError::Checkpoint(m.to_string()));
        if bytes.len() < 8 || bytes[..4] != CHECKPOINT_MAGIC {
            return err("bad magic");
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(SelfTrainError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        if bytes.len() != Self::LEN {
            return err("truncated or oversized checkpoint");
        }
        let word =
            |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes") };
        let ck = Checkpoint {
            next_round: u64::from_le_bytes(word(0)),
            seed: u64::from_le_bytes(word(1)),
            fingerprint: u64::from_le_bytes(word(2)),
            updates: u64::from_le_bytes(word(3)),
            sigma_px: f64::from_le_bytes(word(4)),
            p_out: f64::from_le_bytes(word(5)),
        };
        if !(ck.sigma_px >= 0.0 && ck.sigma_px.is_finite() && (0.0..=1.0).contains(&ck.p_out)) {
            return err("noise state out of range");
        }
        Ok(ck)
    }
}

/// Draws `n` poses with uniformly random rotation and depth in
/// `depth_range` whose landmarks all project at least `margin_px` inside
/// the image.
pub fn sample_visible_poses(
    n: usize,
    seed: u64,
    landmarks: &LandmarkSet,
    camera: &CameraIntrinsics,
    depth_range: (f64, f64),
    margin_px: f64,
) -> Result<Vec<RigidPose>, SelfTrainError> {
    let (lo, hi) = depth_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(SelfTrainError::InvalidConfig(format!(
            "bad depth range [{lo}, {hi}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut poses = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while poses.len() < n {
        attempts += 1;
        if attempts > 1000 * (n + 1) {
            return Err(SelfTrainError::InvalidConfig(
                "no visible poses in the requested depth range; widen it or reduce the margin"
                    .into(),
            ));
        }
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let Ok(rotation) = Quaternion::from_array(q) else {
            continue;
        };
        let depth = rng.random_range(lo..=hi);
        let (u, v) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        let ray = camera.bearing(u, v);
        let pose =
            RigidPose::new(rotation, ray * (depth / ray.norm())).expect("finite translation");
        let Ok(proj) = project_points(&pose, landmarks.points(), camera) else {
            continue;
        };
        let inside = proj.iter().all(|p| {
            p.u >= margin_px && p.u <= w - margin_px && p.v >= margin_px && p.v <= h - margin_px
        });
        if inside {
            poses.push(pose);
        }
    }
    Ok(poses)
}
