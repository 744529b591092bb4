//! Subcommand implementations. Each handler validates all inputs before
//! writing anything; every output file is written atomically.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use satpose::geometry::{project_points, RigidPose};
use satpose::heatmap::encode_heatmap;
use satpose::metrics::{aggregate, pose_score, PoseScore, ScoreSummary};
use satpose::pnp::{ransac_pnp, Correspondence};
use satpose::rasterizer::render_mask;
use satpose::selftrain::{
    generate_pseudo_label, run_self_training, sample_seed, sample_visible_poses, Checkpoint,
    ErrorSummary, RoundReport, Sample, Scene, SyntheticPredictor,
};

use crate::config::{RunConfig, CONFIG_ENV};
use crate::dataset::{load_dataset, load_predictions, save_dataset, DatasetRecord, Domain};
use crate::error::CliError;
use crate::io::{csv_bytes, fmt_f64, mask_png, read_heatmap, write_atomic, write_heatmap};

#[derive(Debug, Parser)]
#[command(
    name = "satpose",
    version,
    about = "Spacecraft pose geometry, pseudo-labeling and scoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; built-in defaults when absent.
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Project the landmarks for every pose into keypoint CSV rows.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pose_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the encoded heatmap of each sample here.
        #[arg(long)]
        heatmap_dir: Option<PathBuf>,
    },
    /// Render a part mask PNG for every pose.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pose_file: PathBuf,
        /// OBJ mesh; overrides the configured one.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Solve RANSAC PnP for every sample of a keypoint CSV.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate pseudo-labels from a directory of heatmap grid files.
    PseudoLabel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        heatmaps: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write pseudo heatmaps and masks of accepted samples here.
        #[arg(long)]
        artifacts_dir: Option<PathBuf>,
    },
    /// Run self-training with the synthetic predictor on a ground-truth dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Total number of rounds; defaults to the configured count.
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume_from: Option<PathBuf>,
    },
    /// Score predicted poses against ground truth.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON; defaults to the output path with a .json extension.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Write a dataset of random poses with all landmarks in view.
    SynthDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    RunConfig::load(common.config.as_deref(), common.seed)
}

fn validation(m: impl Into<String>) -> CliError {
    CliError::Validation(m.into())
}

fn pose_of(r: &DatasetRecord) -> RigidPose {
    r.pose.expect("dataset records carry a pose")
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Project {
            common,
            pose_file,
            out,
            heatmap_dir,
        } => project(
            &load_config(&common)?,
            &pose_file,
            &out,
            heatmap_dir.as_deref(),
        ),
        Command::Render {
            common,
            pose_file,
            mesh,
            out_dir,
        } => render(
            &load_config(&common)?,
            &pose_file,
            mesh.as_deref(),
            &out_dir,
        ),
        Command::Solve {
            common,
            keypoints,
            out,
        } => solve(&load_config(&common)?, &keypoints, &out),
        Command::PseudoLabel {
            common,
            heatmaps,
            out,
            artifacts_dir,
        } => pseudo_label(
            &load_config(&common)?,
            &heatmaps,
            &out,
            artifacts_dir.as_deref(),
        ),
        Command::Simulate {
            common,
            dataset,
            rounds,
            out_dir,
            resume_from,
        } => simulate(
            &load_config(&common)?,
            &dataset,
            rounds,
            &out_dir,
            resume_from.as_deref(),
        ),
        Command::Score {
            common,
            pred,
            gt,
            out,
            summary,
        } => {
            let summary = summary.unwrap_or_else(|| out.with_extension("json"));
            score(&load_config(&common)?, &pred, &gt, &out, &summary)
        }
        Command::SynthDataset { common, count, out } => {
            synth_dataset(&load_config(&common)?, count, &out)
        }
    }
}

fn project(
    cfg: &RunConfig,
    pose_file: &Path,
    out: &Path,
    heatmap_dir: Option<&Path>,
) -> Result<(), CliError> {
    let k = cfg.intrinsics()?;
    let landmarks = cfg.landmarks()?;
    let records = load_dataset(pose_file, &cfg.dataset)?;
    let mut rows = Vec::new();
    let mut heatmaps = Vec::new();
    for r in &records {
        let proj = project_points(&pose_of(r), landmarks.points(), &k)
            .map_err(|e| validation(format!("{}: {e}", r.filename)))?;
        for (i, p) in proj.iter().enumerate() {
            rows.push(vec![
                r.filename.clone(),
                i.to_string(),
                fmt_f64(p.u),
                fmt_f64(p.v),
                fmt_f64(p.depth),
            ]);
        }
        if heatmap_dir.is_some() {
            let kps: Vec<(f64, f64)> = proj.iter().map(|p| (p.u, p.v)).collect();
            let h = encode_heatmap(
                &kps,
                k.height,
                k.width,
                cfg.heatmap.stride,
                cfg.heatmap.sigma,
            )
            .map_err(|e| validation(e.to_string()))?;
            heatmaps.push((stem(&r.filename), h));
        }
    }
    write_atomic(
        out,
        &csv_bytes(&["sample_id", "keypoint", "u", "v", "depth"], rows)?,
    )?;
    if let Some(dir) = heatmap_dir {
        for (name, h) in &heatmaps {
            write_heatmap(&dir.join(format!("{name}.hmap")), h)?;
        }
    }
    Ok(())
}

/// File-system name for a sample: its id without the image extension.
fn stem(id: &str) -> String {
    Path::new(id)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| id.to_string())
}

fn render(
    cfg: &RunConfig,
    pose_file: &Path,
    mesh: Option<&Path>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let k = cfg.intrinsics()?;
    let mesh = cfg.mesh(mesh)?;
    let records = load_dataset(pose_file, &cfg.dataset)?;
    let mut names: Vec<String> = records.iter().map(|r| stem(&r.filename)).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(validation(
            "pose file has samples whose names collide after dropping extensions",
        ));
    }
    let pngs = records
        .par_iter()
        .map(|r| {
            let (mask, _) =
                render_mask(&pose_of(r), &mesh, &k, k.height as usize, k.width as usize);
            Ok((stem(&r.filename), mask_png(&mask)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    for (name, bytes) in pngs {
        write_atomic(&out_dir.join(format!("{name}.png")), &bytes)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct KeypointRow {
    sample_id: String,
    keypoint: usize,
    u: f64,
    v: f64,
    #[serde(default)]
    confidence: Option<f64>,
}

/// Groups keypoint rows by sample in order of first appearance.
fn read_keypoints(
    path: &Path,
    n_landmarks: usize,
) -> Result<Vec<(String, Vec<KeypointRow>)>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut groups: Vec<(String, Vec<KeypointRow>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, row) in reader.deserialize::<KeypointRow>().enumerate() {
        let row = row.map_err(|e| validation(format!("{}: {e}", path.display())))?;
        if row.keypoint >= n_landmarks {
            return Err(validation(format!(
                "{}: row {}: keypoint {} but only {n_landmarks} landmarks",
                path.display(),
                line + 2,
                row.keypoint
            )));
        }
        if !(row.u.is_finite() && row.v.is_finite()) {
            return Err(validation(format!(
                "{}: row {}: non-finite coordinate",
                path.display(),
                line + 2
            )));
        }
        let slot = *index.entry(row.sample_id.clone()).or_insert_with(|| {
            groups.push((row.sample_id.clone(), Vec::new()));
            groups.len() - 1
        });
        if groups[slot].1.iter().any(|r| r.keypoint == row.keypoint) {
            return Err(validation(format!(
                "{}: sample {:?} lists keypoint {} twice",
                path.display(),
                row.sample_id,
                row.keypoint
            )));
        }
        groups[slot].1.push(row);
    }
    Ok(groups)
}

fn solve(cfg: &RunConfig, keypoints: &Path, out: &Path) -> Result<(), CliError> {
    let k = cfg.intrinsics()?;
    let landmarks = cfg.landmarks()?;
    let groups = read_keypoints(keypoints, landmarks.len())?;
    for (id, rows) in &groups {
        if rows.len() < 4 {
            return Err(validation(format!(
                "sample {id:?} has {} keypoints; PnP needs at least 4 correspondences",
                rows.len()
            )));
        }
    }
    eprintln!("seed: {}", cfg.seed);
    let records: Vec<DatasetRecord> = groups
        .par_iter()
        .map(|(id, rows)| {
            let corrs: Vec<Correspondence> = rows
                .iter()
                .map(|r| {
                    Correspondence::new(Vector2::new(r.u, r.v), landmarks.points()[r.keypoint])
                        .with_confidence(r.confidence.unwrap_or(1.0))
                })
                .collect();
            let result = ransac_pnp(&corrs, &k, &cfg.ransac_params(sample_seed(cfg.seed, id))).ok();
            let mut extra = serde_json::Map::new();
            extra.insert("n_in".into(), json!(result.as_ref().map_or(0, |r| r.n_in)));
            let inliers: Vec<usize> = match &result {
                Some(r) => rows
                    .iter()
                    .zip(&r.inlier_mask)
                    .filter(|(_, m)| **m)
                    .map(|(row, _)| row.keypoint)
                    .collect(),
                None => Vec::new(),
            };
            extra.insert("inliers".into(), json!(inliers));
            DatasetRecord {
                filename: id.clone(),
                pose: result.map(|r| r.pose),
                domain: None,
                extra,
            }
        })
        .collect();
    save_dataset(out, &records, &cfg.dataset)
}

fn pseudo_label(
    cfg: &RunConfig,
    dir: &Path,
    out: &Path,
    artifacts: Option<&Path>,
) -> Result<(), CliError> {
    let k = cfg.intrinsics()?;
    let landmarks = cfg.landmarks()?;
    let mesh = cfg.mesh(None)?;
    let scene = Scene {
        landmarks: &landmarks,
        mesh: &mesh,
        camera: &k,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir.display(), e))?
        .map(|e| {
            e.map(|e| e.path())
                .map_err(|err| CliError::io(dir.display(), err))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "hmap"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(validation(format!(
            "{}: no .hmap heatmap files",
            dir.display()
        )));
    }
    let heatmaps = files
        .iter()
        .map(|p| {
            let h = read_heatmap(p, cfg.heatmap.stride)?;
            let expect = (
                landmarks.len(),
                (k.height / cfg.heatmap.stride) as usize,
                (k.width / cfg.heatmap.stride) as usize,
            );
            if (h.channels(), h.height(), h.width()) != expect {
                return Err(validation(format!(
                    "{}: heatmap is {}x{}x{}, expected {}x{}x{}",
                    p.display(),
                    h.channels(),
                    h.height(),
                    h.width(),
                    expect.0,
                    expect.1,
                    expect.2
                )));
            }
            Ok((
                p.file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
                h,
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    eprintln!("seed: {}", cfg.seed);
    let labels = heatmaps
        .par_iter()
        .map(|(id, h)| {
            generate_pseudo_label(id, h, &scene, &cfg.label_params(sample_seed(cfg.seed, id)))
                .map_err(|e| validation(e.to_string()))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let records: Vec<DatasetRecord> = labels
        .iter()
        .map(|l| {
            let mut extra = serde_json::Map::new();
            extra.insert("accepted".into(), json!(l.accepted));
            extra.insert("n_in".into(), json!(l.n_in));
            DatasetRecord {
                filename: l.sample_id.clone(),
                pose: l.pose.as_valid().copied(),
                domain: None,
                extra,
            }
        })
        .collect();
    save_dataset(out, &records, &cfg.dataset)?;
    if let Some(dir) = artifacts {
        for l in labels.iter().filter(|l| l.accepted) {
            if let (Some(h), Some(m)) = (&l.pseudo_heatmap, &l.pseudo_mask) {
                write_heatmap(&dir.join(format!("{}.hmap", l.sample_id)), h)?;
                write_atomic(&dir.join(format!("{}.png", l.sample_id)), &mask_png(m)?)?;
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn round_csv(report: &RoundReport) -> Result<Vec<u8>, CliError> {
    let header = [
        "sample_id",
        "accepted",
        "n_in",
        "qw",
        "qx",
        "qy",
        "qz",
        "tx",
        "ty",
        "tz",
        "rotation_error_deg",
        "translation_error_m",
        "score",
    ];
    let rows = report
        .labels
        .iter()
        .zip(&report.sample_errors)
        .map(|(l, e)| {
            let mut row = vec![
                l.sample_id.clone(),
                l.accepted.to_string(),
                l.n_in.to_string(),
            ];
            match l.pose.as_valid() {
                Some(p) => {
                    row.extend(p.rotation.to_array().iter().copied().map(fmt_f64));
                    row.extend(p.translation.iter().copied().map(fmt_f64));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 7)),
            }
            row.push(fmt_opt(e.map(|e| e.rotation_deg)));
            row.push(fmt_opt(e.map(|e| e.translation_m)));
            row.push(fmt_opt(e.map(|e| e.score)));
            row
        });
    csv_bytes(&header, rows)
}

#[derive(Debug, Serialize)]
struct PredictorState {
    sigma_px: f64,
    p_out: f64,
    updates: u64,
}

#[derive(Debug, Serialize)]
struct RoundSummary {
    round: usize,
    seed: u64,
    total: usize,
    accepted: usize,
    rejected: usize,
    objective: f64,
    errors: Option<ErrorSummary>,
    /// State after this round's update; the labels came from the state before it.
    predictor_after_update: PredictorState,
}

fn simulate(
    cfg: &RunConfig,
    dataset: &Path,
    rounds: Option<usize>,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let total_rounds = rounds.unwrap_or(cfg.selftrain.rounds);
    if total_rounds == 0 {
        return Err(validation("--rounds must be >= 1"));
    }
    let k = cfg.intrinsics()?;
    let landmarks = cfg.landmarks()?;
    let mesh = cfg.mesh(None)?;
    let scene = Scene {
        landmarks: &landmarks,
        mesh: &mesh,
        camera: &k,
    };
    let records = load_dataset(dataset, &cfg.dataset)?;
    if records.is_empty() {
        return Err(validation(format!(
            "{}: dataset is empty",
            dataset.display()
        )));
    }
    let samples: Vec<Sample> = records
        .iter()
        .map(|r| Sample {
            id: r.filename.clone(),
            ground_truth: r.pose,
        })
        .collect();
    let mut ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(validation(format!(
            "{}: duplicate sample ids",
            dataset.display()
        )));
    }
    let err = |e: satpose::selftrain::SelfTrainError| validation(e.to_string());
    let mut predictor =
        SyntheticPredictor::new(cfg.synthetic_params(), &samples, &scene).map_err(err)?;
    let mut first_round = 0;
    if let Some(path) = resume {
        let bytes = fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
        let ck = Checkpoint::from_bytes(&bytes)
            .map_err(|e| validation(format!("{}: {e}", path.display())))?;
        predictor
            .restore(&ck)
            .map_err(|e| validation(format!("{}: {e}", path.display())))?;
        first_round = ck.next_round as usize;
    }
    if first_round >= total_rounds {
        return Err(validation(format!(
            "checkpoint resumes at round {first_round}, but only {total_rounds} rounds were requested"
        )));
    }
    eprintln!("seed: {}", cfg.seed);
    let config = cfg.round_config();
    run_self_training(
        &samples,
        &mut predictor,
        &scene,
        &config,
        first_round,
        total_rounds - first_round,
        |report, p| {
            let summary = RoundSummary {
                round: report.round,
                seed: cfg.seed,
                total: report.total,
                accepted: report.accepted,
                rejected: report.rejected,
                objective: report.objective,
                errors: report.errors,
                predictor_after_update: PredictorState {
                    sigma_px: p.sigma_px(),
                    p_out: p.p_out(),
                    updates: p.updates(),
                },
            };
            let io = |e: CliError| satpose::selftrain::SelfTrainError::Checkpoint(e.to_string());
            let r = report.round;
            write_atomic(
                &out_dir.join(format!("round_{r}.csv")),
                &round_csv(report).map_err(io)?,
            )
            .map_err(io)?;
            let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            text.push('\n');
            write_atomic(&out_dir.join(format!("round_{r}.json")), text.as_bytes()).map_err(io)?;
            write_atomic(
                &out_dir.join(format!("checkpoint_round_{r}.bin")),
                &p.checkpoint(r + 1).to_bytes(),
            )
            .map_err(io)?;
            eprintln!(
                "round {r}: accepted {}/{}, objective {:.6}",
                report.accepted, report.total, report.objective
            );
            Ok(())
        },
    )
    .map_err(|e| match e {
        satpose::selftrain::SelfTrainError::Checkpoint(m) => CliError::Io(m),
        other => validation(other.to_string()),
    })?;
    Ok(())
}

fn score(
    cfg: &RunConfig,
    pred: &Path,
    gt: &Path,
    out: &Path,
    summary_path: &Path,
) -> Result<(), CliError> {
    let truth = load_dataset(gt, &cfg.dataset)?;
    let preds = load_predictions(pred, &cfg.dataset)?;
    let gt_ids: HashMap<&str, usize> = truth
        .iter()
        .enumerate()
        .map(|(i, r)| (r.filename.as_str(), i))
        .collect();
    let mut by_id: HashMap<&str, Option<RigidPose>> = HashMap::new();
    for p in &preds {
        if !gt_ids.contains_key(p.filename.as_str()) {
            return Err(validation(format!(
                "prediction for unknown sample {:?}",
                p.filename
            )));
        }
        if by_id.insert(p.filename.as_str(), p.pose).is_some() {
            return Err(validation(format!(
                "duplicate prediction for {:?}",
                p.filename
            )));
        }
    }
    let thresholds = cfg.thresholds();
    let convention = cfg.metrics.angle_convention;
    let scores = truth
        .iter()
        .map(|g| {
            let Some(Some(p)) = by_id.get(g.filename.as_str()) else {
                return Ok(None);
            };
            let gt_pose = pose_of(g);
            pose_score(
                &p.rotation.to_array(),
                &gt_pose.rotation.to_array(),
                &p.translation.into(),
                &gt_pose.translation.into(),
                &thresholds,
            )
            .map(Some)
            .map_err(|e| validation(format!("{}: {e}", g.filename)))
        })
        .collect::<Result<Vec<Option<PoseScore>>, CliError>>()?;
    let summary: ScoreSummary =
        aggregate(&scores, convention).map_err(|e| validation(e.to_string()))?;
    let header = [
        "sample_id",
        "e_q_deg",
        "e_t_m",
        "s_q_deg",
        "s_q_rad",
        "s_t",
        "score",
    ];
    let rows = truth.iter().zip(&scores).map(|(g, s)| {
        let mut row = vec![g.filename.clone()];
        match s {
            Some(s) => row.extend(
                [
                    s.e_q_deg,
                    s.e_t,
                    s.s_q_deg,
                    s.s_q_rad,
                    s.s_t,
                    s.score(convention),
                ]
                .map(fmt_f64),
            ),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        row
    });
    let csv = csv_bytes(&header, rows)?;
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_atomic(out, &csv)?;
    write_atomic(summary_path, text.as_bytes())
}

fn synth_dataset(cfg: &RunConfig, count: usize, out: &Path) -> Result<(), CliError> {
    let k = cfg.intrinsics()?;
    let landmarks = cfg.landmarks()?;
    let s = &cfg.synthetic;
    eprintln!("seed: {}", cfg.seed);
    let poses = sample_visible_poses(
        count,
        cfg.seed,
        &landmarks,
        &k,
        (s.depth_min, s.depth_max),
        s.margin_px,
    )
    .map_err(|e| validation(e.to_string()))?;
    let records: Vec<DatasetRecord> = poses
        .into_iter()
        .enumerate()
        .map(|(i, p)| DatasetRecord {
            filename: format!("img{:06}.jpg", i + 1),
            pose: Some(p),
            domain: Some(Domain::Synthetic),
            extra: serde_json::Map::<String, Value>::new(),
        })
        .collect();
    save_dataset(out, &records, &cfg.dataset)
}
