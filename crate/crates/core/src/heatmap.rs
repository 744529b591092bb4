//! Keypoint heatmaps: Gaussian encoding of projected landmarks, subpixel
//! peak decoding, the adaptive wing regression loss and the flat binary grid
//! format shared with depth buffers.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("stride {stride} does not divide the {height}x{width} input")]
    BadDimensions {
        stride: u32,
        height: u32,
        width: u32,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad grid file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `channels` grids of `height × width` values in `[0, 1]`, channel-major.
///
/// Heatmap pixel `(x, y)` is centered on input coordinate
/// `(x·stride, y·stride)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    channels: usize,
    height: usize,
    width: usize,
    stride: u32,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(channels: usize, height: usize, width: usize, stride: u32) -> Self {
        Heatmap {
            channels,
            height,
            width,
            stride: stride.max(1),
            data: vec![0.0; channels * height * width],
        }
    }

    /// Wraps raw values, clamping into `[0, 1]`. Non-finite values are rejected.
    pub fn from_raw(
        channels: usize,
        height: usize,
        width: usize,
        stride: u32,
        mut data: Vec<f64>,
    ) -> Result<Self, HeatmapError> {
        if stride == 0 {
            return Err(HeatmapError::InvalidParameter("stride must be >= 1".into()));
        }
        if data.len() != channels * height * width {
            return Err(HeatmapError::ShapeMismatch(format!(
                "{} values for {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(HeatmapError::InvalidParameter(
                "non-finite heatmap value".into(),
            ));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Heatmap {
            channels,
            height,
            width,
            stride,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn stride(&self) -> u32 {
        self.stride
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, y: usize, x: usize) -> f64 {
        self.data[(k * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Zeroes one channel, leaving the others untouched.
    pub fn clear_channel(&mut self, k: usize) {
        let n = self.height * self.width;
        self.data[k * n..(k + 1) * n].fill(0.0);
    }
}

/// Renders each keypoint (input-pixel coordinates) as a unit-peak Gaussian
/// of standard deviation `sigma` heatmap pixels on a grid of
/// `(height / stride) × (width / stride)`.
pub fn encode_heatmap(
    keypoints: &[(f64, f64)],
    height: u32,
    width: u32,
    stride: u32,
    sigma: f64,
) -> Result<Heatmap, HeatmapError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(HeatmapError::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if stride == 0 || !height.is_multiple_of(stride) || !width.is_multiple_of(stride) {
        return Err(HeatmapError::BadDimensions {
            stride,
            height,
            width,
        });
    }
    let (h, w) = ((height / stride) as usize, (width / stride) as usize);
    let s = stride as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut data = Vec::with_capacity(keypoints.len() * h * w);
    for &(u, v) in keypoints {
        let (cu, cv) = (u / s, v / s);
        for y in 0..h {
            let dy = y as f64 - cv;
            for x in 0..w {
                let dx = x as f64 - cu;
                data.push((-(dx * dx + dy * dy) * inv).exp().clamp(0.0, 1.0));
            }
        }
    }
    Ok(Heatmap {
        channels: keypoints.len(),
        height: h,
        width: w,
        stride,
        data,
    })
}

/// One decoded keypoint in input-image pixels with the raw peak as confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedKeypoint {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

/// Arg-max per channel (ties: smallest row, then smallest column) refined to
/// subpixel precision inside the 3×3 neighborhood of the peak.
pub fn decode_heatmap(h: &Heatmap) -> Vec<DecodedKeypoint> {
    (0..h.channels)
        .map(|k| {
            let ch = h.channel(k);
            let (mut best, mut by, mut bx) = (f64::NEG_INFINITY, 0usize, 0usize);
            for y in 0..h.height {
                for x in 0..h.width {
                    let v = ch[y * h.width + x];
                    if v > best {
                        best = v;
                        by = y;
                        bx = x;
                    }
                }
            }
            if h.height == 0 || h.width == 0 {
                return DecodedKeypoint {
                    u: 0.0,
                    v: 0.0,
                    confidence: 0.0,
                };
            }
            let (dx, dy) = refine_peak(ch, h.width, h.height, bx, by);
            let s = h.stride as f64;
            DecodedKeypoint {
                u: (bx as f64 + dx) * s,
                v: (by as f64 + dy) * s,
                confidence: best.clamp(0.0, 1.0),
            }
        })
        .collect()
}

/// Subpixel offset of the peak at `(x, y)`.
///
/// Each axis fits a parabola to the logarithm of the three samples through
/// the peak, which recovers the center of a Gaussian exactly. Where that fit
/// is undefined (grid border, non-positive samples, non-concave profile) the
/// axis falls back to the 3×3 weighted centroid.
fn refine_peak(ch: &[f64], w: usize, h: usize, x: usize, y: usize) -> (f64, f64) {
    let at = |xx: usize, yy: usize| ch[yy * w + xx];
    let centroid = centroid_offset(ch, w, h, x, y);
    let dx = if x > 0 && x + 1 < w {
        log_parabola_vertex(at(x - 1, y), at(x, y), at(x + 1, y))
    } else {
        None
    };
    let dy = if y > 0 && y + 1 < h {
        log_parabola_vertex(at(x, y - 1), at(x, y), at(x, y + 1))
    } else {
        None
    };
    (dx.unwrap_or(centroid.0), dy.unwrap_or(centroid.1))
}

fn log_parabola_vertex(left: f64, center: f64, right: f64) -> Option<f64> {
    if left <= 0.0 || center <= 0.0 || right <= 0.0 {
        return None;
    }
    let (l, c, r) = (left.ln(), center.ln(), right.ln());
    let curvature = l - 2.0 * c + r;
    if curvature.is_nan() || curvature >= 0.0 {
        return None;
    }
    Some((0.5 * (l - r) / curvature).clamp(-0.5, 0.5))
}

/// Value-weighted centroid of the 3×3 neighborhood, indices clamped to the
/// grid. Returns `(0, 0)` for an all-zero neighborhood.
pub(crate) fn centroid_offset(ch: &[f64], w: usize, h: usize, x: usize, y: usize) -> (f64, f64) {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for oy in -1i64..=1 {
        for ox in -1i64..=1 {
            let xx = (x as i64 + ox).clamp(0, w as i64 - 1) as usize;
            let yy = (y as i64 + oy).clamp(0, h as i64 - 1) as usize;
            let v = ch[yy * w + xx];
            sw += v;
            sx += v * (xx as f64 - x as f64);
            sy += v * (yy as f64 - y as f64);
        }
    }
    if sw > 0.0 {
        (sx / sw, sy / sw)
    } else {
        (0.0, 0.0)
    }
}

/// Adaptive wing loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AWingParams {
    pub omega: f64,
    pub theta: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

impl Default for AWingParams {
    fn default() -> Self {
        AWingParams {
            omega: 14.0,
            theta: 0.5,
            epsilon: 1.0,
            alpha: 2.1,
        }
    }
}

impl AWingParams {
    pub fn validate(&self) -> Result<(), HeatmapError> {
        let ok = [self.omega, self.theta, self.epsilon, self.alpha]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(HeatmapError::InvalidParameter(format!(
                "adaptive wing parameters must be positive: {self:?}"
            )))
        }
    }

    /// Penalty and its derivative with respect to `|residual|` for target `y`.
    pub fn penalty(&self, abs_residual: f64, y: f64) -> (f64, f64) {
        let AWingParams {
            omega,
            theta,
            epsilon,
            alpha,
        } = *self;
        let p = alpha - y;
        if abs_residual < theta {
            let r = abs_residual / epsilon;
            let rp = r.powf(p);
            let value = omega * rp.ln_1p();
            let slope = if abs_residual == 0.0 {
                0.0
            } else {
                omega * p * r.powf(p - 1.0) / (epsilon * (1.0 + rp))
            };
            (value, slope)
        } else {
            let te = theta / epsilon;
            let tp = te.powf(p);
            let a = omega * p * te.powf(p - 1.0) / (epsilon * (1.0 + tp));
            let c = theta * a - omega * tp.ln_1p();
            (a * abs_residual - c, a)
        }
    }
}

/// Mean adaptive wing loss over all elements and its gradient with respect
/// to `pred`.
pub fn adaptive_wing_loss_slices(
    pred: &[f64],
    target: &[f64],
    params: &AWingParams,
) -> Result<(f64, Vec<f64>), HeatmapError> {
    params.validate()?;
    if pred.len() != target.len() {
        return Err(HeatmapError::ShapeMismatch(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let r = p - y;
            let (value, slope) = params.penalty(r.abs(), y);
            total += value;
            if r == 0.0 {
                0.0
            } else {
                slope * r.signum() / n
            }
        })
        .collect();
    Ok((total / n, grad))
}

pub fn adaptive_wing_loss(
    pred: &Heatmap,
    target: &Heatmap,
    params: &AWingParams,
) -> Result<(f64, Vec<f64>), HeatmapError> {
    if !pred.same_shape(target) {
        return Err(HeatmapError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            pred.channels, pred.height, pred.width, target.channels, target.height, target.width
        )));
    }
    adaptive_wing_loss_slices(&pred.data, &target.data, params)
}

/// Flat grid file: `b"HMAP"`, then channel count, height and width as
/// little-endian u32, then row-major little-endian f32 values per channel.
pub const GRID_MAGIC: [u8; 4] = *b"HMAP";

/// Writes `channels × height × width` values in the flat grid format.
pub fn write_grid<W: Write>(
    out: &mut W,
    channels: usize,
    height: usize,
    width: usize,
    values: &[f64],
) -> Result<(), HeatmapError> {
    if values.len() != channels * height * width {
        return Err(HeatmapError::ShapeMismatch("grid value count".into()));
    }
    out.write_all(&GRID_MAGIC)?;
    for d in [channels, height, width] {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a flat grid; returns `(channels, height, width, values)`.
pub fn read_grid<R: Read>(input: &mut R) -> Result<(usize, usize, usize, Vec<f64>), HeatmapError> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if header[..4] != GRID_MAGIC {
        return Err(HeatmapError::Format("bad magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(4), dim(8), dim(12));
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| HeatmapError::Format("dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(HeatmapError::Format(format!(
            "expected {} payload bytes, found {}",
            n * 4,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok((c, h, w, values))
}

impl Heatmap {
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<(), HeatmapError> {
        write_grid(out, self.channels, self.height, self.width, &self.data)
    }

    /// The format carries no stride; the caller supplies it.
    pub fn read_from<R: Read>(input: &mut R, stride: u32) -> Result<Self, HeatmapError> {
        let (c, h, w, values) = read_grid(input)?;
        Heatmap::from_raw(c, h, w, stride, values)
    }
}
