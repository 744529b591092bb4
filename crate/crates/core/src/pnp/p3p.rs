//! Grunert's three-point pose solver.
//!
//! With bearings `f1..f3`, unknown distances `s_i` along them, and the
//! inter-point distances `a = |P2−P3|`, `b = |P1−P3|`, `c = |P1−P2|`, the
//! substitution `s2 = u·s1`, `s3 = v·s1` turns the three law-of-cosines
//! constraints into a quartic in `v`; `u` follows rationally.

use super::poly::real_roots;
use super::{Correspondence, PnpError};
use crate::geometry::{rotmat_to_quat, CameraIntrinsics, Mat3, RigidPose, Vec3};

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn poly_add_scaled(acc: &mut [f64], p: &[f64], s: f64) {
    for (a, v) in acc.iter_mut().zip(p) {
        *a += s * v;
    }
}

/// Orthonormal frame spanned by three non-collinear points, anchored at the
/// first.
fn triad(p: &[Vec3; 3]) -> Option<Mat3> {
    let e1 = (p[1] - p[0]).try_normalize(1e-15)?;
    let e3 = e1.cross(&(p[2] - p[0])).try_normalize(1e-15)?;
    let e2 = e3.cross(&e1);
    Some(Mat3::from_columns(&[e1, e2, e3]))
}

/// Newton iterations on the three law-of-cosines constraints
/// `s_j² + s_k² − 2 s_j s_k cos θ_i = d_i²`, kept only while the residual
/// shrinks. Sharpens roots the quartic resolves poorly (near-double roots)
/// and returns `None` when no exact solution is nearby.
fn polish_depths(mut s: [f64; 3], cos: [f64; 3], dist2: [f64; 3]) -> Option<[f64; 3]> {
    // constraint i couples the two depths other than i
    const PAIRS: [(usize, usize); 3] = [(1, 2), (0, 2), (0, 1)];
    let residual = |s: &[f64; 3]| {
        let mut r = [0.0; 3];
        for (i, &(j, k)) in PAIRS.iter().enumerate() {
            r[i] = s[j] * s[j] + s[k] * s[k] - 2.0 * s[j] * s[k] * cos[i] - dist2[i];
        }
        r
    };
    let norm = |r: &[f64; 3]| r.iter().map(|v| v * v).sum::<f64>();
    let mut r = residual(&s);
    for _ in 0..5 {
        let mut j = Mat3::zeros();
        for (i, &(a, b)) in PAIRS.iter().enumerate() {
            j[(i, a)] = 2.0 * s[a] - 2.0 * s[b] * cos[i];
            j[(i, b)] = 2.0 * s[b] - 2.0 * s[a] * cos[i];
        }
        let Some(inv) = j.try_inverse() else {
            break;
        };
        let step = inv * Vec3::from(r);
        let trial = [s[0] - step[0], s[1] - step[1], s[2] - step[2]];
        let rt = residual(&trial);
        // stop unless strictly better; a NaN residual also stops
        if norm(&rt).partial_cmp(&norm(&r)) != Some(std::cmp::Ordering::Less) {
            break;
        }
        s = trial;
        r = rt;
    }
    let scale = dist2.iter().fold(0.0f64, |m, v| m.max(*v));
    (r.iter().all(|v| v.abs() <= 1e-9 * scale) && s.iter().all(|v| *v > 0.0)).then_some(s)
}

/// Up to four poses consistent with three exact correspondences.
pub fn p3p_minimal(
    corrs: &[Correspondence; 3],
    k: &CameraIntrinsics,
) -> Result<Vec<RigidPose>, PnpError> {
    let world = corrs.map(|c| c.object);
    let span = (world[1] - world[0])
        .norm()
        .max((world[2] - world[0]).norm());
    let normal = (world[1] - world[0]).cross(&(world[2] - world[0])).norm();
    if span == 0.0 || normal <= 1e-9 * span * span {
        return Err(PnpError::DegenerateConfiguration(
            "collinear object points".into(),
        ));
    }
    let f = corrs.map(|c| k.bearing(c.image.x, c.image.y));
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if 1.0 - f[i].dot(&f[j]) < 1e-14 {
            return Err(PnpError::DegenerateConfiguration(
                "coincident image rays".into(),
            ));
        }
    }

    let (cos_a, cos_b, cos_g) = (f[1].dot(&f[2]), f[0].dot(&f[2]), f[0].dot(&f[1]));
    let b = (world[0] - world[2]).norm();
    // distances relative to b keep the coefficients O(1)
    let a2 = ((world[1] - world[2]).norm() / b).powi(2);
    let c2 = ((world[0] - world[1]).norm() / b).powi(2);

    // 1 + v² − 2v·cosβ
    let q = [1.0, -2.0 * cos_b, 1.0];
    // u = N(v) / D(v)
    let num = [a2 - c2 + 1.0, -2.0 * (a2 - c2) * cos_b, a2 - c2 - 1.0];
    let den = [2.0 * cos_g, -2.0 * cos_a];

    // N² − 2cosγ·N·D + (1 − c²·q)·D² = 0
    let mut quartic = poly_mul(&num, &num);
    poly_add_scaled(&mut quartic, &poly_mul(&num, &den), -2.0 * cos_g);
    let dd = poly_mul(&den, &den);
    let one_minus_cq = [1.0 - c2 * q[0], -c2 * q[1], -c2 * q[2]];
    poly_add_scaled(&mut quartic, &poly_mul(&one_minus_cq, &dd), 1.0);

    let frame_world = triad(&world).expect("non-collinear checked above");
    let centroid_world = (world[0] + world[1] + world[2]) / 3.0;

    let mut out = Vec::new();
    let mut seen = Vec::new();
    for v in real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let d = den[0] + den[1] * v;
        if d.abs() < 1e-12 {
            continue;
        }
        let u = (num[0] + num[1] * v + num[2] * v * v) / d;
        if u <= 0.0 {
            continue;
        }
        let s1 = b / (1.0 + v * v - 2.0 * v * cos_b).sqrt();
        let Some(depths) = polish_depths(
            [s1, u * s1, v * s1],
            [cos_a, cos_b, cos_g],
            [a2 * b * b, b * b, c2 * b * b],
        ) else {
            continue;
        };
        let duplicate = seen
            .iter()
            .any(|d: &[f64; 3]| (0..3).all(|i| (d[i] - depths[i]).abs() <= 1e-9 * depths[i]));
        if duplicate {
            continue;
        }
        seen.push(depths);
        let cam = [f[0] * depths[0], f[1] * depths[1], f[2] * depths[2]];
        let Some(frame_cam) = triad(&cam) else {
            continue;
        };
        let r = frame_cam * frame_world.transpose();
        let Ok(rotation) = rotmat_to_quat(&r) else {
            continue;
        };
        let centroid_cam = (cam[0] + cam[1] + cam[2]) / 3.0;
        let translation = centroid_cam - r * centroid_world;
        if let Ok(pose) = RigidPose::new(rotation, translation) {
            out.push(pose);
        }
    }
    if out.is_empty() {
        return Err(PnpError::DegenerateConfiguration(
            "no real positive solution".into(),
        ));
    }
    Ok(out)
}
