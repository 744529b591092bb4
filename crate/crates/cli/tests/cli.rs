use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use satpose_cli::dataset::{load_dataset, load_predictions, FieldMapping};
use satpose_cli::io::read_mask_png;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}

fn satpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satpose"))
        .args(args)
        .env_remove("SATPOSE_CONFIG")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, count: usize) -> PathBuf {
    let out = dir.join("gt.json");
    let o = satpose(&[
        "synth-dataset",
        "--count",
        &count.to_string(),
        "--seed",
        "5",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(satpose(&["--help"]).status.code(), Some(0));
    assert_eq!(satpose(&["--version"]).status.code(), Some(0));
    assert_eq!(satpose(&["simulate", "--help"]).status.code(), Some(0));
}

#[test]
fn argument_errors_exit_one() {
    assert_eq!(satpose(&[]).status.code(), Some(1));
    assert_eq!(satpose(&["bogus"]).status.code(), Some(1));
    assert_eq!(
        satpose(&["score", "--pred", "p.json"]).status.code(),
        Some(1)
    );
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = satpose(&[
        "solve",
        "--keypoints",
        s(&dir.path().join("absent.csv")),
        "--out",
        s(&dir.path().join("x.json")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"heatmap": {"stride": 4, "sigmaa": 2.0}}"#).unwrap();
    let o = satpose(&[
        "synth-dataset",
        "--config",
        s(&cfg),
        "--count",
        "2",
        "--out",
        s(&dir.path().join("d.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sigmaa"), "{}", stderr(&o));
}

#[test]
fn config_is_read_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 99}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_satpose"))
        .args([
            "synth-dataset",
            "--count",
            "2",
            "--out",
            s(&dir.path().join("d.json")),
        ])
        .env("SATPOSE_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stderr(&o).contains("seed: 99"), "{}", stderr(&o));
}

#[test]
fn seed_flag_overrides_config_and_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let o = satpose(&[
        "synth-dataset",
        "--count",
        "4",
        "--seed",
        "17",
        "--out",
        s(&a),
    ]);
    assert!(stderr(&o).contains("seed: 17"));
    satpose(&[
        "synth-dataset",
        "--count",
        "4",
        "--seed",
        "17",
        "--out",
        s(&b),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn project_then_solve_recovers_poses() {
    let dir = tempfile::tempdir().unwrap();
    let gt = synth(dir.path(), 6);
    let (kp, pred) = (dir.path().join("kp.csv"), dir.path().join("pred.json"));
    assert!(
        satpose(&["project", "--pose-file", s(&gt), "--out", s(&kp)])
            .status
            .success()
    );
    let text = fs::read_to_string(&kp).unwrap();
    assert!(text.starts_with("sample_id,keypoint,u,v,depth\n"));
    assert_eq!(text.lines().count(), 1 + 6 * 11);
    let o = satpose(&["solve", "--keypoints", s(&kp), "--out", s(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mapping = FieldMapping::default();
    let truth = load_dataset(&gt, &mapping).unwrap();
    let solved = load_predictions(&pred, &mapping).unwrap();
    for (t, p) in truth.iter().zip(&solved) {
        assert_eq!(t.filename, p.filename);
        let (a, b) = (t.pose.unwrap(), p.pose.unwrap());
        assert!(a.rotation.dot(&b.rotation).abs() > 1.0 - 1e-12);
        assert!((a.translation - b.translation).norm() < 1e-6);
        assert_eq!(p.extra["n_in"], 11);
    }
}

#[test]
fn solve_rejects_fewer_than_four_correspondences() {
    let dir = tempfile::tempdir().unwrap();
    let kp = dir.path().join("kp.csv");
    fs::write(&kp, "sample_id,keypoint,u,v\na,0,1,2\na,1,3,4\na,2,5,6\n").unwrap();
    let out = dir.path().join("pred.json");
    let o = satpose(&["solve", "--keypoints", s(&kp), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 4"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn solve_rejects_out_of_range_keypoint() {
    let dir = tempfile::tempdir().unwrap();
    let kp = dir.path().join("kp.csv");
    fs::write(
        &kp,
        "sample_id,keypoint,u,v\na,0,1,2\na,1,3,4\na,2,5,6\na,11,7,8\n",
    )
    .unwrap();
    let o = satpose(&[
        "solve",
        "--keypoints",
        s(&kp),
        "--out",
        s(&dir.path().join("p.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn score_of_ground_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let gt = synth(dir.path(), 5);
    let out = dir.path().join("S.csv");
    assert!(
        satpose(&["score", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&out)])
            .status
            .success()
    );
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let col = reader
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "score")
        .unwrap();
    let mut rows = 0;
    for r in reader.records() {
        assert_eq!(r.unwrap()[col].parse::<f64>().unwrap(), 0.0);
        rows += 1;
    }
    assert_eq!(rows, 5);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("S.json")).unwrap()).unwrap();
    assert_eq!(summary["fraction_zero"], 1.0);
}

#[test]
fn score_rejects_predictions_for_unknown_samples() {
    let dir = tempfile::tempdir().unwrap();
    let gt = synth(dir.path(), 3);
    let pred = dir.path().join("p.json");
    fs::write(
        &pred,
        r#"[{"filename": "other.jpg", "q_vbs2tango_true": null, "r_Vo2To_vbs_true": null}]"#,
    )
    .unwrap();
    let o = satpose(&[
        "score",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
        "--out",
        s(&dir.path().join("S.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn render_writes_working_resolution_masks() {
    let dir = tempfile::tempdir().unwrap();
    let gt = synth(dir.path(), 2);
    let out = dir.path().join("masks");
    assert!(
        satpose(&["render", "--pose-file", s(&gt), "--out-dir", s(&out)])
            .status
            .success()
    );
    let mask = read_mask_png(&fs::read(out.join("img000001.png")).unwrap()).unwrap();
    assert_eq!((mask.width(), mask.height()), (640, 400));
    assert!(mask.foreground_area() > 0);
}

#[test]
fn clean_heatmaps_are_all_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let gt = synth(dir.path(), 4);
    let hm = dir.path().join("hm");
    let kp = dir.path().join("kp.csv");
    assert!(satpose(&[
        "project",
        "--pose-file",
        s(&gt),
        "--out",
        s(&kp),
        "--heatmap-dir",
        s(&hm)
    ])
    .status
    .success());
    let (out, art) = (dir.path().join("labels.json"), dir.path().join("art"));
    let o = satpose(&[
        "pseudo-label",
        "--heatmaps",
        s(&hm),
        "--out",
        s(&out),
        "--artifacts-dir",
        s(&art),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let labels = load_predictions(&out, &FieldMapping::default()).unwrap();
    assert_eq!(labels.len(), 4);
    assert!(labels
        .iter()
        .all(|l| l.extra["accepted"] == true && l.pose.is_some()));
    assert!(art.join("img000001.hmap").exists() && art.join("img000001.png").exists());
}

#[test]
fn resumed_simulation_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let (cfg, gt) = (fx.join("config.json"), fx.join("gt.json"));
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "simulate",
            "--config",
            s(&cfg),
            "--dataset",
            s(&gt),
            "--out-dir",
            s(out),
        ];
        args.extend_from_slice(extra);
        let o = satpose(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run(&full, &[]);
    run(&part, &["--rounds", "1"]);
    let ck = part.join("checkpoint_round_0.bin");
    run(&part, &["--resume-from", s(&ck)]);
    for name in [
        "round_1.csv",
        "round_1.json",
        "round_2.csv",
        "round_2.json",
        "checkpoint_round_2.bin",
    ] {
        assert_eq!(
            fs::read(full.join(name)).unwrap(),
            fs::read(part.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn resume_past_the_last_round_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let ck = fx
        .join("expected")
        .join("simulate")
        .join("checkpoint_round_2.bin");
    let o = satpose(&[
        "simulate",
        "--config",
        s(&fx.join("config.json")),
        "--dataset",
        s(&fx.join("gt.json")),
        "--out-dir",
        s(dir.path()),
        "--resume-from",
        s(&ck),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn checkpoint_from_another_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let ck = fx
        .join("expected")
        .join("simulate")
        .join("checkpoint_round_0.bin");
    let o = satpose(&[
        "simulate",
        "--config",
        s(&fx.join("config.json")),
        "--seed",
        "1",
        "--dataset",
        s(&fx.join("gt.json")),
        "--out-dir",
        s(dir.path()),
        "--resume-from",
        s(&ck),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
