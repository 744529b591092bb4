//! Rigid poses, quaternions, the pinhole camera and the satellite model types.
//!
//! Conventions: quaternions are scalar-first `(w, x, y, z)` Hamilton
//! quaternions describing the active rotation from the body frame into the
//! camera frame. A camera-frame point is `X = R·P + t`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("matrix is not a rotation (orthonormality error {0:e})")]
    NotARotation(f64),
    #[error("point {0} is at or behind the camera plane")]
    BehindCamera(usize),
    #[error("pose is the zero sentinel")]
    ZeroPose,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("landmark set needs at least 4 points, got {0}")]
    TooFewLandmarks(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("triangle {triangle} references vertex {index} but the mesh has {len} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        len: usize,
    },
}

/// Unit quaternion, scalar first, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes the given components.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(GeometryError::DegenerateQuaternion);
        }
        // already-unit input is kept bit-for-bit so serialization round trips are exact
        let inv = if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            1.0
        } else {
            1.0 / n
        };
        let s = if w < 0.0 { -inv } else { inv };
        Ok(Quaternion {
            w: w * s,
            x: x * s,
            y: y * s,
            z: z * s,
        })
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(q[0], q[1], q[2], q[3])
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self, GeometryError> {
        let n = axis.norm();
        if n < 1e-300 {
            return Err(GeometryError::DegenerateQuaternion);
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n * s;
        Self::new(c, a.x, a.y, a.z)
    }

    /// Exponential map of a rotation vector; exact at zero.
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        let theta = v.norm();
        if theta < 1e-12 {
            // second-order expansion keeps the map smooth through zero
            let h = 0.5 * v;
            Self::new(1.0 - theta * theta / 8.0, h.x, h.y, h.z).unwrap_or(Self::IDENTITY)
        } else {
            Self::from_axis_angle(v, theta).unwrap_or(Self::IDENTITY)
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn conjugate(&self) -> Quaternion {
        // w is unchanged so canonical form is preserved
        Quaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * other` (apply `other` first).
    pub fn compose(&self, other: &Quaternion) -> Quaternion {
        let (a, b) = (self, other);
        let w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z;
        let x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y;
        let y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x;
        let z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w;
        Quaternion::new(w, x, y, z).expect("product of unit quaternions is unit")
    }

    pub fn to_rotation_matrix(&self) -> Mat3 {
        quat_to_rotmat(self)
    }

    pub fn rotate(&self, p: &Vec3) -> Vec3 {
        quat_to_rotmat(self) * p
    }
}

impl TryFrom<[f64; 4]> for Quaternion {
    type Error = GeometryError;
    fn try_from(q: [f64; 4]) -> Result<Self, Self::Error> {
        Quaternion::from_array(q)
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        q.to_array()
    }
}

pub fn quat_to_rotmat(q: &Quaternion) -> Mat3 {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, xz, yz) = (x * y, x * z, y * z);
    let (wx, wy, wz) = (w * x, w * y, w * z);
    Mat3::new(
        1.0 - 2.0 * (yy + zz),
        2.0 * (xy - wz),
        2.0 * (xz + wy),
        2.0 * (xy + wz),
        1.0 - 2.0 * (xx + zz),
        2.0 * (yz - wx),
        2.0 * (xz - wy),
        2.0 * (yz + wx),
        1.0 - 2.0 * (xx + yy),
    )
}

/// Tolerance on `‖R·Rᵀ − I‖∞` and `|det R − 1|` accepted by [`rotmat_to_quat`].
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Shepperd's method: the branch is chosen by the largest of the trace and
/// the three diagonal entries, so the divisor never approaches zero.
pub fn rotmat_to_quat(r: &Mat3) -> Result<Quaternion, GeometryError> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite("rotation matrix"));
    }
    let ortho = (r * r.transpose() - Mat3::identity()).amax();
    let det_err = (r.determinant() - 1.0).abs();
    let err = ortho.max(det_err);
    if err > ROTATION_TOLERANCE {
        return Err(GeometryError::NotARotation(err));
    }
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let candidates = [trace, r[(0, 0)], r[(1, 1)], r[(2, 2)]];
    let mut branch = 0;
    for i in 1..4 {
        if candidates[i] > candidates[branch] {
            branch = i;
        }
    }
    let (w, x, y, z) = match branch {
        0 => {
            let s = 2.0 * (1.0 + trace).sqrt();
            (
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        }
        1 => {
            let s = 2.0 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
            (
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            )
        }
        2 => {
            let s = 2.0 * (1.0 - r[(0, 0)] + r[(1, 1)] - r[(2, 2)]).sqrt();
            (
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            )
        }
        _ => {
            let s = 2.0 * (1.0 - r[(0, 0)] - r[(1, 1)] + r[(2, 2)]).sqrt();
            (
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            )
        }
    };
    Quaternion::new(w, x, y, z)
}

/// A proper rigid transform body → camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Quaternion,
    pub translation: Vec3,
}

impl RigidPose {
    pub fn new(rotation: Quaternion, translation: Vec3) -> Result<Self, GeometryError> {
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(RigidPose {
            rotation,
            translation,
        })
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_rotmat(&self.rotation)
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation
    }

    /// Homogeneous 4×4 `[R | t; 0 0 0 1]`.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// A pose or the zero sentinel marking a sample excluded from training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Pose {
    Valid(RigidPose),
    Zero,
}

impl Pose {
    pub fn is_valid(&self) -> bool {
        matches!(self, Pose::Valid(_))
    }

    pub fn as_valid(&self) -> Option<&RigidPose> {
        match self {
            Pose::Valid(p) => Some(p),
            Pose::Zero => None,
        }
    }
}

impl From<RigidPose> for Pose {
    fn from(p: RigidPose) -> Self {
        Pose::Valid(p)
    }
}

/// Zero-skew pinhole intrinsics together with the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidIntrinsics(m));
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            ));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx={} outside (0, {})", self.cx, self.width));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy={} outside (0, {})", self.cy, self.height));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Intrinsics for the same camera resampled to `width × height`.
    pub fn resized(&self, width: u32, height: u32) -> Result<Self, GeometryError> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            width,
            height,
        )
    }

    /// Pixel → unit-norm bearing in the camera frame.
    pub fn bearing(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }
}

/// A projected point: pixel coordinates and camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Pinhole projection without clipping to the image bounds.
pub fn project_points(
    pose: &RigidPose,
    points: &[Vec3],
    k: &CameraIntrinsics,
) -> Result<Vec<Projection>, GeometryError> {
    let r = pose.rotation_matrix();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = r * p + pose.translation;
            if c.z <= 0.0 {
                return Err(GeometryError::BehindCamera(i));
            }
            Ok(Projection {
                u: k.fx * c.x / c.z + k.cx,
                v: k.fy * c.y / c.z + k.cy,
                depth: c.z,
            })
        })
        .collect()
}

/// Rotation angle (rad, in `[0, π]`) and translation distance between poses.
pub fn pose_distance(a: &Pose, b: &Pose) -> Result<(f64, f64), GeometryError> {
    match (a, b) {
        (Pose::Valid(a), Pose::Valid(b)) => Ok(rigid_distance(a, b)),
        _ => Err(GeometryError::ZeroPose),
    }
}

pub fn rigid_distance(a: &RigidPose, b: &RigidPose) -> (f64, f64) {
    let d = a.rotation.dot(&b.rotation).abs().min(1.0);
    (2.0 * d.acos(), (a.translation - b.translation).norm())
}

/// The N_p model landmarks in body coordinates; order is significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct LandmarkSet {
    points: Vec<Vec3>,
}

impl LandmarkSet {
    pub const MIN_POINTS: usize = 4;

    pub fn new(points: Vec<Vec3>) -> Result<Self, GeometryError> {
        if points.len() < Self::MIN_POINTS {
            return Err(GeometryError::TooFewLandmarks(points.len()));
        }
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeometryError::NonFinite("landmark"));
        }
        Ok(LandmarkSet { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl TryFrom<Vec<[f64; 3]>> for LandmarkSet {
    type Error = GeometryError;
    fn try_from(v: Vec<[f64; 3]>) -> Result<Self, Self::Error> {
        LandmarkSet::new(v.into_iter().map(Vec3::from).collect())
    }
}

impl From<LandmarkSet> for Vec<[f64; 3]> {
    fn from(l: LandmarkSet) -> Self {
        l.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }
}

/// Part categories of the labeled mesh. Discriminants are the mask labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartLabel {
    Antenna1 = 1,
    Antenna2 = 2,
    Antenna3 = 3,
    SolarPanel = 4,
    Body = 5,
}

impl PartLabel {
    pub const ALL: [PartLabel; 5] = [
        PartLabel::Antenna1,
        PartLabel::Antenna2,
        PartLabel::Antenna3,
        PartLabel::SolarPanel,
        PartLabel::Body,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            PartLabel::Antenna1 => "antenna1",
            PartLabel::Antenna2 => "antenna2",
            PartLabel::Antenna3 => "antenna3",
            PartLabel::SolarPanel => "solar_panel",
            PartLabel::Body => "body",
        }
    }

    /// Case-insensitive match against the canonical category names.
    pub fn parse(name: &str) -> Option<PartLabel> {
        let lower = name.to_ascii_lowercase();
        PartLabel::ALL.into_iter().find(|p| p.name() == lower)
    }
}

/// Texture-less triangle mesh with one part label per triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    labels: Vec<PartLabel>,
}

/// Triangles whose doubled area falls below this are dropped at load.
pub const DEGENERATE_AREA: f64 = 1e-12;

impl LabeledMesh {
    /// Validates indices and drops zero-area triangles. Returns the mesh and
    /// the number of triangles dropped.
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[usize; 3]>,
        labels: Vec<PartLabel>,
    ) -> Result<(Self, usize), GeometryError> {
        assert_eq!(triangles.len(), labels.len(), "one label per triangle");
        if vertices.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeometryError::NonFinite("mesh vertex"));
        }
        let mut kept_t = Vec::with_capacity(triangles.len());
        let mut kept_l = Vec::with_capacity(labels.len());
        let mut dropped = 0;
        for (ti, (tri, label)) in triangles.into_iter().zip(labels).enumerate() {
            for &index in &tri {
                if index >= vertices.len() {
                    return Err(GeometryError::IndexOutOfRange {
                        triangle: ti,
                        index,
                        len: vertices.len(),
                    });
                }
            }
            let [a, b, c] = tri.map(|i| vertices[i]);
            if (b - a).cross(&(c - a)).norm() <= DEGENERATE_AREA {
                dropped += 1;
                continue;
            }
            kept_t.push(tri);
            kept_l.push(label);
        }
        Ok((
            LabeledMesh {
                vertices,
                triangles: kept_t,
                labels: kept_l,
            },
            dropped,
        ))
    }

    pub fn empty() -> Self {
        LabeledMesh {
            vertices: Vec::new(),
            triangles: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn labels(&self) -> &[PartLabel] {
        &self.labels
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Corners of the `i`-th triangle.
    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        self.triangles[i].map(|j| self.vertices[j])
    }
}

/// Homogeneous-coordinate oracle for [`project_points`]: `K [R|t] [P;1]`.
pub fn project_homogeneous(pose: &RigidPose, p: &Vec3, k: &CameraIntrinsics) -> (f64, f64, f64) {
    let m = pose.to_homogeneous();
    let c = m * Vector4::new(p.x, p.y, p.z, 1.0);
    let h = k.matrix() * c.xyz();
    (h.x / h.z, h.y / h.z, c.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_4, PI};

    pub(crate) fn random_quat(rng: &mut impl Rng) -> Quaternion {
        // Shoemake's uniform sampling
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        Quaternion::new(
            a * (2.0 * PI * u2).sin(),
            a * (2.0 * PI * u2).cos(),
            b * (2.0 * PI * u3).sin(),
            b * (2.0 * PI * u3).cos(),
        )
        .unwrap()
    }

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 320.0, 200.0, 640, 400).unwrap()
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        assert_eq!(quat_to_rotmat(&Quaternion::IDENTITY), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = Quaternion::new(FRAC_PI_4.cos(), 0.0, 0.0, FRAC_PI_4.sin()).unwrap();
        let p = q.rotate(&Vec3::x());
        assert!((p - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn random_rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let r = quat_to_rotmat(&random_quat(&mut rng));
            assert!((r * r.transpose() - Mat3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_sign() {
        let q = Quaternion::new(-0.5, 0.5, 0.5, 0.5).unwrap();
        assert!(q.w() >= 0.0);
        assert_eq!(q.to_array(), [0.5, -0.5, -0.5, -0.5]);
        let norm: f64 = q.to_array().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn rotmat_identity() {
        assert_eq!(
            rotmat_to_quat(&Mat3::identity()).unwrap(),
            Quaternion::IDENTITY
        );
    }

    #[test]
    fn rotmat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let r = quat_to_rotmat(&random_quat(&mut rng));
            let back = quat_to_rotmat(&rotmat_to_quat(&r).unwrap());
            worst = worst.max((back - r).amax());
        }
        assert!(worst < 1e-9, "worst {worst}");
    }

    #[test]
    fn rotmat_round_trip_near_half_turn() {
        // w ≈ 0 exercises each of the diagonal branches
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let axes = [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 1.0, 1.0)];
        for axis in axes {
            for _ in 0..50 {
                let jitter: f64 = rng.random_range(-1e-6..1e-6);
                let q = Quaternion::from_axis_angle(&axis, PI + jitter).unwrap();
                let r = quat_to_rotmat(&q);
                let back = rotmat_to_quat(&r).unwrap();
                assert!((quat_to_rotmat(&back) - r).amax() < 1e-7);
                assert!(back.dot(&q).abs() > 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn rotmat_rejects_non_rotation() {
        let m = Mat3::identity() * 1.01;
        assert!(matches!(
            rotmat_to_quat(&m),
            Err(GeometryError::NotARotation(_))
        ));
        let reflection = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(rotmat_to_quat(&reflection).is_err());
    }

    #[test]
    fn optical_axis_point_hits_principal_point() {
        let pose = RigidPose::new(Quaternion::IDENTITY, Vec3::new(0.0, 0.0, 5.0)).unwrap();
        let out =
            project_points(&pose, &[Vec3::zeros(), Vec3::new(0.5, 0.0, 0.0)], &camera()).unwrap();
        assert_eq!(
            out[0],
            Projection {
                u: 320.0,
                v: 200.0,
                depth: 5.0
            }
        );
        assert_eq!(
            out[1],
            Projection {
                u: 420.0,
                v: 200.0,
                depth: 5.0
            }
        );
    }

    #[test]
    fn projection_behind_camera_reports_index() {
        let pose = RigidPose::new(Quaternion::IDENTITY, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let pts = [Vec3::zeros(), Vec3::new(0.0, 0.0, -1.0)];
        assert_eq!(
            project_points(&pose, &pts, &camera()),
            Err(GeometryError::BehindCamera(1))
        );
    }

    #[test]
    fn projection_matches_homogeneous_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = camera();
        for _ in 0..10_000 {
            let pose = RigidPose::new(
                random_quat(&mut rng),
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(3.0..10.0),
                ),
            )
            .unwrap();
            let p = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let got = project_points(&pose, &[p], &k).unwrap()[0];
            let (u, v, z) = project_homogeneous(&pose, &p, &k);
            assert!((got.u - u).abs() < 1e-9 && (got.v - v).abs() < 1e-9);
            assert!((got.depth - z).abs() < 1e-12);
        }
    }

    #[test]
    fn pose_distance_cases() {
        let t = Vec3::new(0.0, 0.0, 5.0);
        let a = Pose::Valid(RigidPose::new(Quaternion::IDENTITY, t).unwrap());
        assert_eq!(pose_distance(&a, &a).unwrap(), (0.0, 0.0));
        let half =
            Pose::Valid(RigidPose::new(Quaternion::new(0.0, 0.0, 0.0, 1.0).unwrap(), t).unwrap());
        let (ang, dist) = pose_distance(&a, &half).unwrap();
        assert!((ang - PI).abs() < 1e-12 && dist == 0.0);
        assert_eq!(pose_distance(&a, &Pose::Zero), Err(GeometryError::ZeroPose));
    }

    #[test]
    fn negated_quaternion_is_same_rotation() {
        let q = Quaternion::new(0.3, -0.2, 0.9, 0.1).unwrap();
        let neg = Quaternion::new(-0.3, 0.2, -0.9, -0.1).unwrap();
        let t = Vec3::new(0.1, 0.2, 4.0);
        let (ang, _) = rigid_distance(
            &RigidPose::new(q, t).unwrap(),
            &RigidPose::new(neg, t).unwrap(),
        );
        assert!(ang < 1e-7);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 0.0, 4, 4).is_err());
        let k = CameraIntrinsics::new(2988.0, 2988.0, 960.0, 600.0, 1920, 1200).unwrap();
        let small = k.resized(640, 400).unwrap();
        assert!((small.fx - 996.0).abs() < 1e-12 && (small.cx - 320.0).abs() < 1e-12);
    }

    #[test]
    fn landmark_minimum() {
        assert_eq!(
            LandmarkSet::new(vec![Vec3::zeros(); 3]),
            Err(GeometryError::TooFewLandmarks(3))
        );
    }

    #[test]
    fn mesh_drops_degenerate_triangles() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::x() * 2.0];
        let (mesh, dropped) = LabeledMesh::new(
            v,
            vec![[0, 1, 2], [0, 1, 3]],
            vec![PartLabel::Body, PartLabel::Body],
        )
        .unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(mesh.triangle_count(), 1);
    }

    #[test]
    fn mesh_rejects_bad_index() {
        let err = LabeledMesh::new(vec![Vec3::zeros()], vec![[0, 0, 5]], vec![PartLabel::Body]);
        assert!(matches!(
            err,
            Err(GeometryError::IndexOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn part_label_parsing_is_case_insensitive() {
        assert_eq!(PartLabel::parse("Solar_Panel"), Some(PartLabel::SolarPanel));
        assert_eq!(PartLabel::parse("BODY"), Some(PartLabel::Body));
        assert_eq!(PartLabel::parse("dish"), None);
    }
}
