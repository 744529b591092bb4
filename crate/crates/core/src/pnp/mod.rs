//! Robust pose from 2D–3D correspondences: a minimal three-point solver
//! inside seeded RANSAC, followed by Huber-weighted refinement on the
//! consensus set.

mod p3p;
pub(crate) mod poly;
mod refine;

use nalgebra::Vector2;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, RigidPose, Vec3};

pub use p3p::p3p_minimal;
pub use refine::{huber, huber_cost, refine_huber, Refinement};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("need at least {need} correspondences, got {got}")]
    TooFewCorrespondences { got: usize, need: usize },
    #[error("no pose hypothesis reached the minimum inlier count")]
    NoSolution,
    #[error("correspondence {0} is at or behind the camera")]
    BehindCamera(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// One putative match between a pixel and a model point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub image: Vector2<f64>,
    pub object: Vec3,
    pub confidence: f64,
}

impl Correspondence {
    pub fn new(image: Vector2<f64>, object: Vec3) -> Self {
        Correspondence {
            image,
            object,
            confidence: 1.0,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    fn is_finite(&self) -> bool {
        self.image
            .iter()
            .chain(self.object.iter())
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RansacParams {
    pub max_iterations: usize,
    /// Reprojection distance τ below which a correspondence is an inlier.
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    pub rng_seed: u64,
    pub huber_delta_px: f64,
    pub refine_iterations: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            max_iterations: 256,
            inlier_threshold_px: 5.0,
            min_inliers: 4,
            rng_seed: 0x5eed_2023,
            huber_delta_px: 5.0,
            refine_iterations: 50,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), PnpError> {
        let bad = |m: String| Err(PnpError::InvalidParams(m));
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1".into());
        }
        if !(self.inlier_threshold_px > 0.0 && self.inlier_threshold_px.is_finite()) {
            return bad(format!(
                "inlier threshold must be positive, got {}",
                self.inlier_threshold_px
            ));
        }
        if self.huber_delta_px.is_nan() || self.huber_delta_px <= 0.0 {
            return bad(format!(
                "huber delta must be positive, got {}",
                self.huber_delta_px
            ));
        }
        if self.min_inliers < 4 {
            return bad(format!(
                "min_inliers must be >= 4, got {}",
                self.min_inliers
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpResult {
    pub pose: RigidPose,
    pub inlier_mask: Vec<bool>,
    pub n_in: usize,
    pub final_cost: f64,
}

/// Reprojection distance of each correspondence; `None` behind the camera.
pub fn reprojection_errors(
    pose: &RigidPose,
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
) -> Vec<Option<f64>> {
    let r = pose.rotation_matrix();
    corrs
        .iter()
        .map(|c| {
            let x = r * c.object + pose.translation;
            (x.z > 0.0).then(|| {
                let u = k.fx * x.x / x.z + k.cx;
                let v = k.fy * x.y / x.z + k.cy;
                (Vector2::new(u, v) - c.image).norm()
            })
        })
        .collect()
}

/// Inliers have reprojection distance strictly below `tau`.
pub fn count_inliers(
    pose: &RigidPose,
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    tau: f64,
) -> (usize, Vec<bool>) {
    let mask: Vec<bool> = reprojection_errors(pose, corrs, k)
        .into_iter()
        .map(|e| e.is_some_and(|e| e < tau))
        .collect();
    (mask.iter().filter(|m| **m).count(), mask)
}

/// Candidate minimal sets. When every triple fits in the iteration budget
/// they are all visited in a seeded order; otherwise triples are drawn at
/// random.
fn minimal_sets(n: usize, budget: usize, rng: &mut ChaCha8Rng) -> Vec<[usize; 3]> {
    let total = n * (n - 1) * (n - 2) / 6;
    if total <= budget {
        let mut all = Vec::with_capacity(total);
        for i in 0..n {
            for j in i + 1..n {
                for l in j + 1..n {
                    all.push([i, j, l]);
                }
            }
        }
        all.shuffle(rng);
        all
    } else {
        (0..budget)
            .map(|_| {
                let s = index::sample(rng, n, 3);
                [s.index(0), s.index(1), s.index(2)]
            })
            .collect()
    }
}

#[derive(Clone, Copy)]
struct Scored {
    n_in: usize,
    spread: f64,
}

impl Scored {
    fn better_than(&self, other: &Scored) -> bool {
        self.n_in > other.n_in || (self.n_in == other.n_in && self.spread < other.spread)
    }
}

fn score(pose: &RigidPose, corrs: &[Correspondence], k: &CameraIntrinsics, tau: f64) -> Scored {
    let mut s = Scored {
        n_in: 0,
        spread: 0.0,
    };
    for e in reprojection_errors(pose, corrs, k).into_iter().flatten() {
        if e < tau {
            s.n_in += 1;
            s.spread += e * e;
        }
    }
    s
}

fn select(corrs: &[Correspondence], mask: &[bool]) -> Vec<Correspondence> {
    corrs
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| *c)
        .collect()
}

/// Seeded RANSAC over [`p3p_minimal`] followed by [`refine_huber`] on the
/// consensus set. Deterministic for a fixed `rng_seed`.
pub fn ransac_pnp(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    params: &RansacParams,
) -> Result<PnpResult, PnpError> {
    params.validate()?;
    if corrs.len() < 4 {
        return Err(PnpError::TooFewCorrespondences {
            got: corrs.len(),
            need: 4,
        });
    }
    if corrs.iter().any(|c| !c.is_finite()) {
        return Err(PnpError::InvalidParams("non-finite correspondence".into()));
    }
    let tau = params.inlier_threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);

    let mut best: Option<(RigidPose, Scored)> = None;
    for set in minimal_sets(corrs.len(), params.max_iterations, &mut rng) {
        let triple = set.map(|i| corrs[i]);
        let Ok(candidates) = p3p_minimal(&triple, k) else {
            continue;
        };
        for pose in candidates {
            let s = score(&pose, corrs, k, tau);
            if best.as_ref().is_none_or(|(_, b)| s.better_than(b)) {
                best = Some((pose, s));
            }
        }
        if best.as_ref().is_some_and(|(_, b)| b.n_in == corrs.len()) {
            break;
        }
    }
    let Some((mut pose, s)) = best else {
        return Err(PnpError::NoSolution);
    };
    if s.n_in < params.min_inliers {
        return Err(PnpError::NoSolution);
    }

    let (mut n_in, mut mask) = count_inliers(&pose, corrs, k, tau);
    for _ in 0..4 {
        let inliers = select(corrs, &mask);
        let Ok(refined) = refine_huber(
            &pose,
            &inliers,
            k,
            params.huber_delta_px,
            params.refine_iterations,
        ) else {
            break;
        };
        let (new_n, new_mask) = count_inliers(&refined.pose, corrs, k, tau);
        if new_n < n_in {
            break;
        }
        let changed = new_mask != mask;
        pose = refined.pose;
        n_in = new_n;
        mask = new_mask;
        if !changed {
            break;
        }
    }
    let final_cost = huber_cost(&pose, &select(corrs, &mask), k, params.huber_delta_px)
        .expect("inliers are in front of the camera");
    Ok(PnpResult {
        pose,
        inlier_mask: mask,
        n_in,
        final_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_points, rigid_distance, Quaternion};
    use rand::Rng;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(996.0, 996.0, 320.0, 200.0, 640, 400).unwrap()
    }

    fn exact(pose: &RigidPose, pts: &[Vec3]) -> Vec<Correspondence> {
        project_points(pose, pts, &camera())
            .unwrap()
            .iter()
            .zip(pts)
            .map(|(p, &o)| Correspondence::new(Vector2::new(p.u, p.v), o))
            .collect()
    }

    fn scene(seed: u64) -> (RigidPose, Vec<Vec3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Quaternion::from_axis_angle(&Vec3::new(0.3, -1.0, 0.4), 1.2).unwrap();
        let pose = RigidPose::new(q, Vec3::new(0.2, 0.1, 6.0)).unwrap();
        let pts = (0..11)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                )
            })
            .collect();
        (pose, pts)
    }

    #[test]
    fn exact_correspondences_give_all_inliers() {
        let (pose, pts) = scene(41);
        let corrs = exact(&pose, &pts);
        let out = ransac_pnp(&corrs, &camera(), &RansacParams::default()).unwrap();
        assert_eq!(out.n_in, 11);
        let (dr, dt) = rigid_distance(&out.pose, &pose);
        assert!(dr < 1e-6 && dt < 1e-6);
    }

    #[test]
    fn planted_outliers_are_rejected() {
        let (pose, pts) = scene(42);
        let mut corrs = exact(&pose, &pts);
        for (i, d) in [(2, (50.0, 0.0)), (5, (0.0, -50.0)), (9, (35.4, 35.4))] {
            corrs[i].image += Vector2::new(d.0, d.1);
        }
        let out = ransac_pnp(&corrs, &camera(), &RansacParams::default()).unwrap();
        assert_eq!(out.n_in, 8);
        assert!(!out.inlier_mask[2] && !out.inlier_mask[5] && !out.inlier_mask[9]);
        assert!(rigid_distance(&out.pose, &pose).0 < 1e-6);
    }

    #[test]
    fn inconsistent_input_has_no_solution() {
        let (pose, pts) = scene(43);
        let mut corrs = exact(&pose, &pts[..4]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for c in &mut corrs {
            c.image += Vector2::new(
                rng.random_range(60.0..200.0),
                rng.random_range(-200.0..-60.0),
            );
        }
        // four random offsets cannot leave four points mutually consistent
        corrs[3].image = Vector2::new(5.0, 390.0);
        assert_eq!(
            ransac_pnp(&corrs, &camera(), &RansacParams::default()),
            Err(PnpError::NoSolution)
        );
    }

    #[test]
    fn too_few_correspondences() {
        let (pose, pts) = scene(44);
        let corrs = exact(&pose, &pts[..3]);
        assert!(matches!(
            ransac_pnp(&corrs, &camera(), &RansacParams::default()),
            Err(PnpError::TooFewCorrespondences { got: 3, need: 4 })
        ));
    }

    #[test]
    fn deterministic_and_self_consistent() {
        let (pose, pts) = scene(45);
        let mut corrs = exact(&pose, &pts);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for c in &mut corrs {
            c.image += Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        }
        corrs[0].image.x += 80.0;
        let params = RansacParams::default();
        let a = ransac_pnp(&corrs, &camera(), &params).unwrap();
        let b = ransac_pnp(&corrs, &camera(), &params).unwrap();
        assert_eq!(a, b);
        let (n, mask) = count_inliers(&a.pose, &corrs, &camera(), params.inlier_threshold_px);
        assert_eq!((n, mask), (a.n_in, a.inlier_mask.clone()));
        assert!(a.final_cost >= 0.0);
    }

    #[test]
    fn threshold_semantics() {
        let (pose, pts) = scene(46);
        let mut corrs = exact(&pose, &pts[..3]);
        assert_eq!(count_inliers(&pose, &corrs, &camera(), 1e-9).0, 3);
        assert_eq!(count_inliers(&pose, &corrs, &camera(), 0.0).0, 0);
        for (c, off) in corrs.iter_mut().zip([0.1, 4.9, 5.1]) {
            c.image.x += off;
        }
        let (n, mask) = count_inliers(&pose, &corrs, &camera(), 5.0);
        assert_eq!(n, 2);
        assert_eq!(mask, vec![true, true, false]);
    }

    #[test]
    fn behind_camera_is_an_outlier() {
        let pose = RigidPose::new(Quaternion::IDENTITY, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let corrs = vec![Correspondence::new(
            Vector2::new(320.0, 200.0),
            Vec3::new(0.0, 0.0, -2.0),
        )];
        assert_eq!(count_inliers(&pose, &corrs, &camera(), 1e9).0, 0);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let (pose, pts) = scene(47);
        let corrs = exact(&pose, &pts);
        let p = RansacParams {
            inlier_threshold_px: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            ransac_pnp(&corrs, &camera(), &p),
            Err(PnpError::InvalidParams(_))
        ));
    }
}
