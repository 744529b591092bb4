//! Run configuration: a JSON document whose sections map onto the core
//! parameter types. Every section and field is optional; unknown keys are
//! rejected. [`RunConfig::validate`] checks every range up front.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use satpose::geometry::{CameraIntrinsics, LabeledMesh, LandmarkSet};
use satpose::heatmap::AWingParams;
use satpose::metrics::{AngleConvention, ScoreThresholds};
use satpose::model;
use satpose::pnp::RansacParams;
use satpose::rasterizer::ObjectiveWeights;
use satpose::selftrain::{LabelParams, RoundConfig, SyntheticParams};

use crate::dataset::FieldMapping;
use crate::error::CliError;
use crate::mesh::{load_landmarks, load_mesh};

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "SATPOSE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Size of the images the intrinsics above describe.
    pub width: u32,
    pub height: u32,
    /// Resolution everything is computed at; intrinsics are rescaled to it.
    pub working_width: u32,
    pub working_height: u32,
}

impl Default for CameraSection {
    fn default() -> Self {
        CameraSection {
            fx: 2988.5795,
            fy: 2988.3401,
            cx: 960.0,
            cy: 600.0,
            width: 1920,
            height: 1200,
            working_width: 640,
            working_height: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSection {
    pub stride: u32,
    pub sigma: f64,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        HeatmapSection {
            stride: 4,
            sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacSection {
    pub inlier_threshold_px: f64,
    pub huber_delta_px: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub refine_iterations: usize,
}

impl Default for RansacSection {
    fn default() -> Self {
        let d = RansacParams::default();
        RansacSection {
            inlier_threshold_px: d.inlier_threshold_px,
            huber_delta_px: d.huber_delta_px,
            max_iterations: d.max_iterations,
            min_inliers: d.min_inliers,
            refine_iterations: d.refine_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainSection {
    pub n_th: usize,
    pub rounds: usize,
    pub lambda_m: f64,
    pub lambda_a: f64,
    pub min_confidence: Option<f64>,
}

impl Default for SelfTrainSection {
    fn default() -> Self {
        let w = ObjectiveWeights::default();
        SelfTrainSection {
            n_th: 8,
            rounds: 3,
            lambda_m: w.lambda_m,
            lambda_a: w.lambda_a,
            min_confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub sigma_px: f64,
    pub p_out: f64,
    pub outlier_px: f64,
    pub gamma: f64,
    pub sigma_min: f64,
    /// Pose sampling for `synth-dataset`.
    pub depth_min: f64,
    pub depth_max: f64,
    pub margin_px: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let d = SyntheticParams::default();
        SyntheticSection {
            sigma_px: d.sigma_px,
            p_out: d.p_out,
            outlier_px: d.outlier_px,
            gamma: d.gamma,
            sigma_min: d.sigma_min,
            depth_min: 4.0,
            depth_max: 10.0,
            margin_px: 16.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub theta_q_deg: f64,
    pub theta_t: f64,
    pub angle_convention: AngleConvention,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let t = ScoreThresholds::default();
        MetricsSection {
            theta_q_deg: t.theta_q_deg,
            theta_t: t.theta_t,
            angle_convention: AngleConvention::Radians,
        }
    }
}

/// Model files; the built-in spacecraft is used for any that are absent.
/// Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub mesh: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub camera: CameraSection,
    pub heatmap: HeatmapSection,
    pub ransac: RansacSection,
    pub selftrain: SelfTrainSection,
    pub synthetic: SyntheticSection,
    pub metrics: MetricsSection,
    pub paths: PathsSection,
    pub dataset: FieldMapping,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2023,
            camera: CameraSection::default(),
            heatmap: HeatmapSection::default(),
            ransac: RansacSection::default(),
            selftrain: SelfTrainSection::default(),
            synthetic: SyntheticSection::default(),
            metrics: MetricsSection::default(),
            paths: PathsSection::default(),
            dataset: FieldMapping::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn invalid(m: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("config: {m}"))
}

impl RunConfig {
    /// Reads and validates `path`, or returns validated defaults for `None`.
    pub fn load(path: Option<&Path>, seed_override: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("reading config {}: {e}", p.display())))?;
                let mut cfg: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                cfg.base_dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                cfg
            }
        };
        if let Some(s) = seed_override {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.camera;
        CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height).map_err(invalid)?;
        self.intrinsics()?;
        let h = &self.heatmap;
        if h.stride == 0
            || !c.working_width.is_multiple_of(h.stride)
            || !c.working_height.is_multiple_of(h.stride)
        {
            return Err(invalid(format!(
                "heatmap stride {} must divide the working resolution {}x{}",
                h.stride, c.working_width, c.working_height
            )));
        }
        if !(h.sigma > 0.0 && h.sigma.is_finite()) {
            return Err(invalid(format!(
                "heatmap sigma must be positive, got {}",
                h.sigma
            )));
        }
        self.label_params(self.seed).validate().map_err(invalid)?;
        let st = &self.selftrain;
        if st.rounds == 0 {
            return Err(invalid("selftrain.rounds must be >= 1"));
        }
        for (name, v) in [("lambda_m", st.lambda_m), ("lambda_a", st.lambda_a)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!(
                    "selftrain.{name} must be non-negative, got {v}"
                )));
            }
        }
        self.synthetic_params().validate().map_err(invalid)?;
        let s = &self.synthetic;
        if !(s.depth_min > 0.0 && s.depth_max >= s.depth_min && s.depth_max.is_finite()) {
            return Err(invalid(format!(
                "bad synthetic depth range [{}, {}]",
                s.depth_min, s.depth_max
            )));
        }
        if !(s.margin_px >= 0.0 && s.margin_px.is_finite()) {
            return Err(invalid(format!(
                "synthetic.margin_px must be non-negative, got {}",
                s.margin_px
            )));
        }
        let m = &self.metrics;
        if !(m.theta_q_deg >= 0.0
            && m.theta_q_deg.is_finite()
            && m.theta_t >= 0.0
            && m.theta_t.is_finite())
        {
            return Err(invalid("metric thresholds must be non-negative"));
        }
        self.dataset.validate()
    }

    /// Intrinsics at the working resolution.
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, CliError> {
        let c = &self.camera;
        CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height)
            .and_then(|k| k.resized(c.working_width, c.working_height))
            .map_err(invalid)
    }

    pub fn ransac_params(&self, seed: u64) -> RansacParams {
        let r = &self.ransac;
        RansacParams {
            max_iterations: r.max_iterations,
            inlier_threshold_px: r.inlier_threshold_px,
            min_inliers: r.min_inliers,
            rng_seed: seed,
            huber_delta_px: r.huber_delta_px,
            refine_iterations: r.refine_iterations,
        }
    }

    pub fn label_params(&self, seed: u64) -> LabelParams {
        LabelParams {
            n_th: self.selftrain.n_th,
            heatmap_sigma: self.heatmap.sigma,
            min_confidence: self.selftrain.min_confidence,
            ransac: self.ransac_params(seed),
        }
    }

    pub fn round_config(&self) -> RoundConfig {
        RoundConfig {
            label: self.label_params(self.seed),
            weights: ObjectiveWeights {
                lambda_m: self.selftrain.lambda_m,
                lambda_a: self.selftrain.lambda_a,
                awing: AWingParams::default(),
            },
            thresholds: self.thresholds(),
            seed: self.seed,
        }
    }

    pub fn synthetic_params(&self) -> SyntheticParams {
        let s = &self.synthetic;
        SyntheticParams {
            sigma_px: s.sigma_px,
            p_out: s.p_out,
            outlier_px: s.outlier_px,
            gamma: s.gamma,
            sigma_min: s.sigma_min,
            stride: self.heatmap.stride,
            heatmap_sigma: self.heatmap.sigma,
            seed: self.seed,
        }
    }

    pub fn thresholds(&self) -> ScoreThresholds {
        ScoreThresholds {
            theta_q_deg: self.metrics.theta_q_deg,
            theta_t: self.metrics.theta_t,
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn landmarks(&self) -> Result<LandmarkSet, CliError> {
        match &self.paths.landmarks {
            None => Ok(model::landmarks()),
            Some(p) => load_landmarks(&self.resolve(p)),
        }
    }

    /// The configured mesh, or the built-in one. Dropped degenerate
    /// triangles are reported on stderr.
    pub fn mesh(&self, override_path: Option<&Path>) -> Result<LabeledMesh, CliError> {
        let path = override_path
            .map(Path::to_path_buf)
            .or_else(|| self.paths.mesh.as_ref().map(|p| self.resolve(p)));
        match path {
            None => Ok(model::mesh()),
            Some(p) => {
                let (mesh, dropped) = load_mesh(&p)?;
                if dropped > 0 {
                    eprintln!("{}: dropped {dropped} degenerate triangles", p.display());
                }
                Ok(mesh)
            }
        }
    }
}
