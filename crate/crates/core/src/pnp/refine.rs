//! Levenberg–Marquardt refinement of a pose under the Huber penalty on
//! per-point reprojection distance, solved by iterative reweighting.

use nalgebra::{Matrix6, SMatrix, Vector2, Vector6};

use super::{Correspondence, PnpError};
use crate::geometry::{CameraIntrinsics, Quaternion, RigidPose, Vec3};

/// Huber penalty on a non-negative residual norm.
pub fn huber(r: f64, delta: f64) -> f64 {
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// `Σ φ(‖reprojection residual‖)`, or `None` if any point is at or behind
/// the camera.
pub fn huber_cost(
    pose: &RigidPose,
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    delta: f64,
) -> Option<f64> {
    let r = pose.rotation_matrix();
    let mut cost = 0.0;
    for c in corrs {
        let x = r * c.object + pose.translation;
        if x.z <= 0.0 {
            return None;
        }
        let e = Vector2::new(k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy) - c.image;
        cost += huber(e.norm(), delta);
    }
    Some(cost)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub pose: RigidPose,
    pub cost: f64,
    pub iterations: usize,
    /// A trial step put a point at non-positive depth; the best iterate
    /// before it is returned.
    pub diverged_behind_camera: bool,
}

fn apply(pose: &RigidPose, step: &Vector6<f64>) -> RigidPose {
    let omega = Vec3::new(step[0], step[1], step[2]);
    let dq = Quaternion::from_rotation_vector(&omega);
    RigidPose {
        rotation: dq.compose(&pose.rotation),
        translation: pose.translation + Vec3::new(step[3], step[4], step[5]),
    }
}

/// Gauss–Newton system `(Σ w JᵀJ, Σ w Jᵀe)` with Huber IRLS weights. The
/// update is a rotation vector applied on the left plus a translation offset.
fn normal_equations(
    pose: &RigidPose,
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    delta: f64,
) -> (Matrix6<f64>, Vector6<f64>) {
    let r = pose.rotation_matrix();
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for c in corrs {
        let rp = r * c.object;
        let x = rp + pose.translation;
        let iz = 1.0 / x.z;
        let e = Vector2::new(k.fx * x.x * iz + k.cx, k.fy * x.y * iz + k.cy) - c.image;
        let norm = e.norm();
        let w = if norm <= delta { 1.0 } else { delta / norm };
        // d(u,v)/dX
        let dpx = SMatrix::<f64, 2, 3>::new(
            k.fx * iz,
            0.0,
            -k.fx * x.x * iz * iz,
            0.0,
            k.fy * iz,
            -k.fy * x.y * iz * iz,
        );
        // dX/dω = −[R·P]×, dX/dt = I
        let skew = rp.cross_matrix();
        let mut j = SMatrix::<f64, 2, 6>::zeros();
        j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-dpx * skew));
        j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpx);
        h += w * j.transpose() * j;
        g += w * j.transpose() * e;
    }
    (h, g)
}

/// Locally minimizes the Huber reprojection cost starting from `initial`.
///
/// Accepted steps strictly decrease the cost. Use `delta = f64::INFINITY`
/// for plain least squares.
pub fn refine_huber(
    initial: &RigidPose,
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    delta: f64,
    iterations: usize,
) -> Result<Refinement, PnpError> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(PnpError::InvalidParams(format!(
            "huber delta must be positive, got {delta}"
        )));
    }
    let r = initial.rotation_matrix();
    if let Some(i) = corrs
        .iter()
        .position(|c| (r * c.object + initial.translation).z <= 0.0)
    {
        return Err(PnpError::BehindCamera(i));
    }
    let mut pose = *initial;
    let mut cost = huber_cost(&pose, corrs, k, delta).expect("depths checked");
    let mut lambda = 1e-3;
    let mut diverged = false;
    let mut done = 0;
    while done < iterations && cost > 0.0 {
        done += 1;
        let (h, g) = normal_equations(&pose, corrs, k, delta);
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-9);
            }
            let Some(step) = damped.cholesky().map(|c| -c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = apply(&pose, &step);
            match huber_cost(&trial, corrs, k, delta) {
                None => {
                    diverged = true;
                    lambda *= 10.0;
                }
                Some(c) if c < cost => {
                    let small = step.norm() < 1e-15 * (1.0 + pose.translation.norm());
                    let stalled = cost - c <= 1e-15 * cost;
                    pose = trial;
                    cost = c;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = !(small || stalled);
                    break;
                }
                Some(_) => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    Ok(Refinement {
        pose,
        cost,
        iterations: done,
        diverged_behind_camera: diverged,
    })
}
