use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use satpose::geometry::{project_points, rigid_distance, CameraIntrinsics, Quaternion, RigidPose};
use satpose::model;
use satpose::pnp::{count_inliers, ransac_pnp, Correspondence, RansacParams};

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(2988.5795, 2988.3401, 960.0, 600.0, 1920, 1200)
        .unwrap()
        .resized(640, 400)
        .unwrap()
}

/// Uniform rotation; translation of norm in [3, 10] m whose direction
/// projects inside the image.
fn random_pose(rng: &mut impl Rng, k: &CameraIntrinsics) -> RigidPose {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let ray = k.bearing(
        rng.random_range(0.0..k.width as f64),
        rng.random_range(0.0..k.height as f64),
    );
    RigidPose::new(
        Quaternion::from_array(q).unwrap(),
        ray * rng.random_range(3.0..10.0),
    )
    .unwrap()
}

fn observe(pose: &RigidPose, noise: f64, rng: &mut impl Rng) -> Vec<Correspondence> {
    let lm = model::landmarks();
    let n = Normal::new(0.0, noise).unwrap();
    project_points(pose, lm.points(), &camera())
        .unwrap()
        .iter()
        .zip(lm.points())
        .map(|(p, &obj)| {
            Correspondence::new(Vector2::new(p.u + n.sample(rng), p.v + n.sample(rng)), obj)
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    0.5 * (v[(v.len() - 1) / 2] + v[v.len() / 2])
}

#[test]
fn median_rotation_error_grows_with_noise() {
    let k = camera();
    let mut medians = Vec::new();
    for (level, sigma) in [0.0, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + level as u64);
        let errs: Vec<f64> = (0..500)
            .map(|_| {
                let pose = random_pose(&mut rng, &k);
                let corrs = observe(&pose, sigma, &mut rng);
                let est = ransac_pnp(&corrs, &k, &RansacParams::default()).unwrap();
                rigid_distance(&est.pose, &pose).0
            })
            .collect();
        medians.push(median(errs));
    }
    assert!(medians[0] < 1e-6, "{medians:?}");
    for w in medians.windows(2) {
        assert!(w[1] > w[0], "{medians:?}");
    }
}

#[test]
fn results_are_self_consistent() {
    let k = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(410);
    let params = RansacParams::default();
    for _ in 0..100 {
        let pose = random_pose(&mut rng, &k);
        let mut corrs = observe(&pose, 1.5, &mut rng);
        corrs[rng.random_range(0..11)].image += Vector2::new(60.0, -30.0);
        let est = ransac_pnp(&corrs, &k, &params).unwrap();
        let (n_in, mask) = count_inliers(&est.pose, &corrs, &k, params.inlier_threshold_px);
        assert_eq!((n_in, &mask), (est.n_in, &est.inlier_mask));
        assert_eq!(est, ransac_pnp(&corrs, &k, &params).unwrap());
    }
}

#[test]
fn three_planted_outliers_stay_within_twice_clean_median() {
    let k = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(420);
    let params = RansacParams::default();
    let (mut clean, mut corrupted) = (Vec::new(), Vec::new());
    for _ in 0..300 {
        let pose = random_pose(&mut rng, &k);
        let mut corrs = observe(&pose, 1.0, &mut rng);
        let base = ransac_pnp(&corrs[3..], &k, &params).unwrap();
        for c in corrs.iter_mut().take(3) {
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            c.image += Vector2::new(phi.cos(), phi.sin()) * 50.0;
        }
        let robust = ransac_pnp(&corrs, &k, &params).unwrap();
        clean.push(rigid_distance(&base.pose, &pose).0);
        corrupted.push(rigid_distance(&robust.pose, &pose).0);
    }
    let (c, r) = (median(clean), median(corrupted));
    assert!(r <= 2.0 * c, "{r} vs {c}");
}
