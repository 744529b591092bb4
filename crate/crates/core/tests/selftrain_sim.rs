use satpose::geometry::{CameraIntrinsics, LabeledMesh, LandmarkSet};
use satpose::model;
use satpose::selftrain::{
    geometric_labels, run_round, run_self_training, sample_visible_poses, Checkpoint, LabelParams,
    RoundConfig, RoundReport, Sample, Scene, SyntheticParams, SyntheticPredictor,
};

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(2988.5795, 2988.3401, 960.0, 600.0, 1920, 1200)
        .unwrap()
        .resized(640, 400)
        .unwrap()
}

struct Fixture {
    landmarks: LandmarkSet,
    mesh: LabeledMesh,
    camera: CameraIntrinsics,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            landmarks: model::landmarks(),
            mesh: model::mesh(),
            camera: camera(),
        }
    }

    fn scene(&self) -> Scene<'_> {
        Scene {
            landmarks: &self.landmarks,
            mesh: &self.mesh,
            camera: &self.camera,
        }
    }

    fn dataset(&self, n: usize, seed: u64) -> Vec<Sample> {
        sample_visible_poses(n, seed, &self.landmarks, &self.camera, (4.0, 10.0), 16.0)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, p)| Sample {
                id: format!("img{i:06}.jpg"),
                ground_truth: Some(p),
            })
            .collect()
    }
}

fn run(
    fx: &Fixture,
    data: &[Sample],
    params: SyntheticParams,
    config: &RoundConfig,
    rounds: usize,
) -> (Vec<RoundReport>, SyntheticPredictor) {
    let mut p = SyntheticPredictor::new(params, data, &fx.scene()).unwrap();
    let reports =
        run_self_training(data, &mut p, &fx.scene(), config, 0, rounds, |_, _| Ok(())).unwrap();
    (reports, p)
}

#[test]
fn noiseless_predictor_accepts_everything() {
    let fx = Fixture::new();
    let data = fx.dataset(40, 11);
    let params = SyntheticParams {
        sigma_px: 0.0,
        p_out: 0.0,
        ..Default::default()
    };
    let (reports, _) = run(&fx, &data, params, &RoundConfig::default(), 1);
    let r = &reports[0];
    assert_eq!((r.accepted, r.rejected, r.total), (40, 0, 40));
    assert!(r.errors.unwrap().mean_rotation_deg.to_radians() < 1e-6);
}

#[test]
fn unsatisfiable_threshold_rejects_all_and_never_updates() {
    let fx = Fixture::new();
    let data = fx.dataset(20, 12);
    let config = RoundConfig {
        label: LabelParams {
            n_th: 12,
            ..Default::default()
        },
        ..Default::default()
    };
    let params = SyntheticParams {
        sigma_px: 0.0,
        p_out: 0.0,
        ..Default::default()
    };
    let (reports, p) = run(&fx, &data, params, &config, 3);
    for r in &reports {
        assert_eq!(r.accepted, 0);
        assert!(r.errors.is_none());
    }
    assert_eq!(p.updates(), 0);
}

#[test]
fn labels_satisfy_acceptance_coupling_and_geometric_identity() {
    let fx = Fixture::new();
    let data = fx.dataset(30, 13);
    let (reports, _) = run(
        &fx,
        &data,
        SyntheticParams {
            sigma_px: 2.0,
            ..Default::default()
        },
        &RoundConfig::default(),
        2,
    );
    let n_th = LabelParams::default().n_th;
    for r in &reports {
        assert_eq!(r.accepted + r.rejected, r.total);
        for l in &r.labels {
            assert_eq!(l.accepted, l.pose.is_valid());
            assert_eq!(l.accepted, l.n_in >= n_th);
            assert_eq!(l.accepted, l.pseudo_heatmap.is_some());
            assert_eq!(l.accepted, l.pseudo_mask.is_some());
            if let Some(pose) = l.pose.as_valid() {
                let (h, m) = geometric_labels(pose, &fx.scene(), 4, 2.0).unwrap();
                assert_eq!(l.pseudo_heatmap.as_ref().unwrap().data(), h.data());
                assert_eq!(l.pseudo_mask.as_ref().unwrap(), &m);
            }
        }
    }
}

#[test]
fn accepted_count_is_monotone_under_shrinking_noise() {
    let fx = Fixture::new();
    let data = fx.dataset(60, 14);
    let params = SyntheticParams {
        sigma_px: 3.0,
        p_out: 0.2,
        ..Default::default()
    };
    let (reports, _) = run(&fx, &data, params, &RoundConfig::default(), 3);
    for w in reports.windows(2) {
        assert!(
            w[1].accepted >= w[0].accepted,
            "{} then {}",
            w[0].accepted,
            w[1].accepted
        );
    }
    let first = reports[0].errors.unwrap().mean_rotation_deg;
    let last = reports[2].errors.unwrap().mean_rotation_deg;
    assert!(last < first);
}

#[test]
fn reruns_are_bit_identical() {
    let fx = Fixture::new();
    let data = fx.dataset(25, 15);
    let (a, _) = run(
        &fx,
        &data,
        SyntheticParams::default(),
        &RoundConfig::default(),
        3,
    );
    let (b, _) = run(
        &fx,
        &data,
        SyntheticParams::default(),
        &RoundConfig::default(),
        3,
    );
    assert_eq!(a, b);
}

#[test]
fn single_round_equals_run_round() {
    let fx = Fixture::new();
    let data = fx.dataset(15, 16);
    let (a, _) = run(
        &fx,
        &data,
        SyntheticParams::default(),
        &RoundConfig::default(),
        1,
    );
    let mut p = SyntheticPredictor::new(SyntheticParams::default(), &data, &fx.scene()).unwrap();
    let b = run_round(0, &data, &mut p, &fx.scene(), &RoundConfig::default()).unwrap();
    assert_eq!(a[0], b);
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let fx = Fixture::new();
    let data = fx.dataset(25, 17);
    let params = SyntheticParams {
        sigma_px: 3.0,
        ..Default::default()
    };
    let config = RoundConfig::default();
    let (full, _) = run(&fx, &data, params, &config, 3);

    let mut first = SyntheticPredictor::new(params, &data, &fx.scene()).unwrap();
    let mut saved = Vec::new();
    run_self_training(&data, &mut first, &fx.scene(), &config, 0, 1, |r, p| {
        saved = p.checkpoint(r.round + 1).to_bytes();
        Ok(())
    })
    .unwrap();

    let ck = Checkpoint::from_bytes(&saved).unwrap();
    let mut resumed = SyntheticPredictor::new(params, &data, &fx.scene()).unwrap();
    resumed.restore(&ck).unwrap();
    let rest = run_self_training(
        &data,
        &mut resumed,
        &fx.scene(),
        &config,
        ck.next_round as usize,
        2,
        |_, _| Ok(()),
    )
    .unwrap();
    assert_eq!(&full[1..], &rest[..]);
}

#[test]
fn empty_dataset_is_rejected() {
    let fx = Fixture::new();
    let mut p = SyntheticPredictor::new(SyntheticParams::default(), &[], &fx.scene()).unwrap();
    assert!(run_round(0, &[], &mut p, &fx.scene(), &RoundConfig::default()).is_err());
}
