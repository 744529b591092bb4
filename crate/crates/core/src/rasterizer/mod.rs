//! Z-buffer rasterization of a part-labeled mesh into a fine-grained mask.
//!
//! Pixel `(row, col)` samples the image point `(col + 0.5, row + 0.5)`.
//! Coverage uses edge functions with a top-left fill rule, so triangles that
//! share an edge never both claim a pixel center on it. Depth is interpolated
//! as `1/z` (perspective correct) and the nearest triangle wins; equal depths
//! keep the earlier triangle. There is no backface culling.

mod loss;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, LabeledMesh, RigidPose, Vec3};

pub use loss::{
    adversarial_loss, discriminator_bce, mask_cross_entropy, mask_cross_entropy_raw,
    total_objective, ObjectiveWeights, SourceSample, TargetSample, PROBABILITY_FLOOR,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),
    #[error("mask label {0} out of range 0..=5")]
    BadLabel(u8),
}

/// Number of mask classes: background plus the five parts.
pub const MASK_CLASSES: usize = 6;

/// Triangles are clipped against this camera-frame depth (meters).
pub const NEAR_PLANE: f64 = 1e-3;

/// Per-pixel part labels: 0 is background, 1..=5 follow
/// [`PartLabel`](crate::geometry::PartLabel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FineMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl FineMask {
    pub fn background(height: usize, width: usize) -> Self {
        FineMask {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn from_labels(height: usize, width: usize, labels: Vec<u8>) -> Result<Self, RasterError> {
        if labels.len() != height * width {
            return Err(RasterError::ShapeMismatch(format!(
                "{} labels for {height}x{width}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= MASK_CLASSES) {
            return Err(RasterError::BadLabel(bad));
        }
        Ok(FineMask {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Pixels with a non-background label.
    pub fn foreground_area(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// 2×2 block vote; ties go to the smallest label.
    pub fn downsample_majority(&self) -> FineMask {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut labels = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let mut votes = [0u8; MASK_CLASSES];
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    votes[self.get(2 * r + dr, 2 * c + dc) as usize] += 1;
                }
                let mut best = 0;
                for l in 1..MASK_CLASSES {
                    if votes[l] > votes[best] {
                        best = l;
                    }
                }
                labels.push(best as u8);
            }
        }
        FineMask {
            height: h,
            width: w,
            labels,
        }
    }
}

/// Per-pixel class probabilities, channel-major (`6 × height × width`).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskProbabilities {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl MaskProbabilities {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        let n = height * width;
        if data.len() != MASK_CLASSES * n {
            return Err(RasterError::ShapeMismatch(format!(
                "{} values for 6x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(RasterError::InvalidProbabilities(
                "value outside [0, 1]".into(),
            ));
        }
        for i in 0..n {
            let s: f64 = (0..MASK_CLASSES).map(|c| data[c * n + i]).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(RasterError::InvalidProbabilities(format!(
                    "pixel {i} sums to {s}"
                )));
            }
        }
        Ok(MaskProbabilities {
            height,
            width,
            data,
        })
    }

    /// `confidence` on each pixel's label, the rest spread evenly.
    pub fn from_mask(mask: &FineMask, confidence: f64) -> Self {
        let c = confidence.clamp(0.0, 1.0);
        let rest = (1.0 - c) / (MASK_CLASSES - 1) as f64;
        let n = mask.height * mask.width;
        let mut data = vec![rest; MASK_CLASSES * n];
        for (i, &l) in mask.labels.iter().enumerate() {
            data[l as usize * n + i] = c;
        }
        MaskProbabilities {
            height: mask.height,
            width: mask.width,
            data,
        }
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        MaskProbabilities {
            height,
            width,
            data: vec![1.0 / MASK_CLASSES as f64; MASK_CLASSES * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Nearest-surface depth per pixel in meters; `+∞` where nothing was drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct ScreenTriangle {
    p: [(f64, f64); 3],
    inv_z: [f64; 3],
    area: f64,
    label: u8,
    row_min: usize,
    row_max: usize,
    col_min: usize,
    col_max: usize,
}

/// Edge function anchored at the lexicographically smaller endpoint, so
/// `edge(a, b, p) == -edge(b, a, p)` holds exactly in floating point.
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let raw = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    if a <= b {
        raw(a, b)
    } else {
        -raw(b, a)
    }
}

/// Whether a pixel center lying exactly on edge `a → b` is owned by the
/// triangle (positively oriented, y down): top and left edges only.
fn owns_edge(a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Sutherland–Hodgman against `z >= NEAR_PLANE`.
fn clip_near(tri: [Vec3; 3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let (ina, inb) = (a.z >= NEAR_PLANE, b.z >= NEAR_PLANE);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE;
            out.push(p);
        }
    }
    out
}

fn setup(
    cam: [Vec3; 3],
    label: u8,
    k: &CameraIntrinsics,
    height: usize,
    width: usize,
    out: &mut Vec<ScreenTriangle>,
) {
    if cam.iter().all(|v| v.z < NEAR_PLANE) {
        return;
    }
    let poly = if cam.iter().all(|v| v.z >= NEAR_PLANE) {
        cam.to_vec()
    } else {
        clip_near(cam)
    };
    let project = |v: &Vec3| {
        (
            (k.fx * v.x / v.z + k.cx, k.fy * v.y / v.z + k.cy),
            1.0 / v.z,
        )
    };
    for i in 1..poly.len().saturating_sub(1) {
        let verts = [project(&poly[0]), project(&poly[i]), project(&poly[i + 1])];
        let mut p = verts.map(|v| v.0);
        let mut inv_z = verts.map(|v| v.1);
        let mut area = edge(p[0], p[1], p[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            p.swap(1, 2);
            inv_z.swap(1, 2);
            area = -area;
        }
        let (xmin, xmax) = (
            p[0].0.min(p[1].0).min(p[2].0),
            p[0].0.max(p[1].0).max(p[2].0),
        );
        let (ymin, ymax) = (
            p[0].1.min(p[1].1).min(p[2].1),
            p[0].1.max(p[1].1).max(p[2].1),
        );
        // pixel centers c + 0.5 inside [min, max]
        let lo = |m: f64| (m - 0.5).ceil().max(0.0);
        let hi = |m: f64, n: usize| (m - 0.5).floor().min(n as f64 - 1.0);
        let (c0, c1, r0, r1) = (lo(xmin), hi(xmax, width), lo(ymin), hi(ymax, height));
        if c0 > c1 || r0 > r1 {
            continue;
        }
        out.push(ScreenTriangle {
            p,
            inv_z,
            area,
            label,
            row_min: r0 as usize,
            row_max: r1 as usize,
            col_min: c0 as usize,
            col_max: c1 as usize,
        });
    }
}

fn shade_row(row: usize, tris: &[ScreenTriangle], labels: &mut [u8], depth: &mut [f64]) {
    let y = row as f64 + 0.5;
    for t in tris.iter().filter(|t| t.row_min <= row && row <= t.row_max) {
        let [a, b, c] = t.p;
        for col in t.col_min..=t.col_max {
            let q = (col as f64 + 0.5, y);
            let w0 = edge(b, c, q);
            let w1 = edge(c, a, q);
            let w2 = edge(a, b, q);
            let inside = |w: f64, from, to| w > 0.0 || (w == 0.0 && owns_edge(from, to));
            if !(inside(w0, b, c) && inside(w1, c, a) && inside(w2, a, b)) {
                continue;
            }
            let iz = (w0 * t.inv_z[0] + w1 * t.inv_z[1] + w2 * t.inv_z[2]) / t.area;
            let z = 1.0 / iz;
            if z < depth[col] {
                depth[col] = z;
                labels[col] = t.label;
            }
        }
    }
}

/// Renders `mesh` under `pose` into a `height × width` part mask and depth
/// buffer. Rows are shaded in parallel; the output does not depend on the
/// number of threads.
pub fn render_mask(
    pose: &RigidPose,
    mesh: &LabeledMesh,
    k: &CameraIntrinsics,
    height: usize,
    width: usize,
) -> (FineMask, DepthBuffer) {
    let r = pose.rotation_matrix();
    let cam: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|v| r * v + pose.translation)
        .collect();
    let mut tris = Vec::with_capacity(mesh.triangle_count());
    for (tri, label) in mesh.triangles().iter().zip(mesh.labels()) {
        setup(
            tri.map(|i| cam[i]),
            label.index(),
            k,
            height,
            width,
            &mut tris,
        );
    }

    let mut labels = vec![0u8; height * width];
    let mut depth = vec![f64::INFINITY; height * width];
    if width > 0 {
        labels
            .par_chunks_mut(width)
            .zip(depth.par_chunks_mut(width))
            .enumerate()
            .for_each(|(row, (l, d))| shade_row(row, &tris, l, d));
    }
    (
        FineMask {
            height,
            width,
            labels,
        },
        DepthBuffer {
            height,
            width,
            depth,
        },
    )
}
