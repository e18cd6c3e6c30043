use eecal_core::calibration::{frame_calibration, mad_outlier_mask, OutlierConfig};
use eecal_core::geometry::{kabsch_fit, quaternion_average, rotation_distance, Pose, Quaternion};
use eecal_core::rpt::{rotate_back, rpt_translation};
use eecal_core::simulator::{build_ee_model, GripperDims};
use nalgebra::{Point3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

fn random_rotation<R: Rng>(rng: &mut R) -> Quaternion {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    Quaternion::from_axis_angle(
        &Unit::new_normalize(Vector3::from(axis)),
        rng.random_range(0.0..std::f64::consts::PI),
    )
}

fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    Pose::new(random_rotation(rng), t)
}

fn poses_match(a: &Pose, b: &Pose, tol: f64) -> bool {
    (a.translation - b.translation).norm() <= tol && rotation_distance(&a.rotation, &b.rotation) <= tol
}

#[test]
fn kabsch_recovers_a_thousand_random_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let pose = random_pose(&mut rng);
        let n = rng.random_range(3..40);
        let src: Vec<Point3<f64>> = (0..n)
            .map(|_| Point3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .collect();
        let dst: Vec<Point3<f64>> = src.iter().map(|p| pose.rotation * p + pose.translation).collect();
        let fit = kabsch_fit(&src, &dst).unwrap();
        assert!(poses_match(&fit, &pose, 1e-8), "{fit:?} vs {pose:?}");
    }
}

#[test]
fn averaging_a_quaternion_with_its_negation_returns_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let q = random_rotation(&mut rng);
        let neg = Unit::new_unchecked(-q.into_inner());
        let avg = quaternion_average(&[q, neg], None).unwrap();
        assert!(rotation_distance(&avg, &q) < 1e-9);
    }
}

#[test]
fn planted_outlier_is_always_flagged() {
    let cfg = OutlierConfig::default();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.01;
        let noise = Normal::new(0.0, scale).unwrap();
        let inliers = rng.random_range(5..20);
        let mut values: Vec<f64> = (0..inliers).map(|_| 1.0 + noise.sample(&mut rng)).collect();
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let at = rng.random_range(0..=values.len());
        values.insert(at, 1.0 + sign * 10.0 * scale);
        let mask = mad_outlier_mask(&values, &cfg).unwrap();
        assert!(mask[at], "seed {seed}: planted value {} missed", values[at]);
    }
}

fn model_points() -> (Vec<Point3<f64>>, eecal_core::simulator::RptDescriptor) {
    let m = build_ee_model(&GripperDims::default(), 40_000.0).unwrap();
    (m.surface.points, m.rpt_descriptor)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn average_ignores_order_and_signs(seed in any::<u64>(), flips in prop::collection::vec(any::<bool>(), 2..9)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_rotation(&mut rng);
        let qs: Vec<Quaternion> = flips
            .iter()
            .map(|_| {
                let small = Quaternion::from_scaled_axis(Vector3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                ));
                base * small
            })
            .collect();
        let reference = quaternion_average(&qs, None).unwrap();
        let mut shuffled: Vec<Quaternion> = qs
            .iter()
            .zip(&flips)
            .map(|(q, &f)| if f { Unit::new_unchecked(-q.into_inner()) } else { *q })
            .collect();
        shuffled.reverse();
        shuffled.rotate_left(seed as usize % qs.len());
        let other = quaternion_average(&shuffled, None).unwrap();
        prop_assert!(rotation_distance(&reference, &other) < 1e-9);
    }

    #[test]
    fn rpt_translation_is_exact_on_a_transformed_model(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng);
        let (local, descriptor) = model_points();
        let observed = eecal_core::PointCloud::new(local.iter().map(|p| pose.apply(p)).collect());
        let back = rotate_back(&observed, &pose.rotation);
        let t = rpt_translation(&back.points, &pose.rotation, &descriptor, 0.0).unwrap();
        prop_assert!((t - pose.translation).norm() < 1e-9);
    }

    #[test]
    fn rpt_translation_is_rotation_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng);
        let extra = random_rotation(&mut rng);
        let (local, descriptor) = model_points();
        let observed = eecal_core::PointCloud::new(local.iter().map(|p| pose.apply(p)).collect());
        let back = rotate_back(&observed, &pose.rotation);
        let t = rpt_translation(&back.points, &pose.rotation, &descriptor, 0.0).unwrap();

        let turned = eecal_core::PointCloud::new(observed.points.iter().map(|p| extra * p).collect());
        let rotation = extra * pose.rotation;
        let back2 = rotate_back(&turned, &rotation);
        let t2 = rpt_translation(&back2.points, &rotation, &descriptor, 0.0).unwrap();
        prop_assert!((t2 - extra * t).norm() < 1e-9);
    }

    #[test]
    fn frame_calibration_inverts_the_kinematic_chain(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_c_b = random_pose(&mut rng);
        let t_b_ee = random_pose(&mut rng);
        let t_c_ee = Pose::new(t_c_b.rotation * t_b_ee.rotation, t_c_b.rotation * t_b_ee.translation + t_c_b.translation);
        prop_assert!(poses_match(&frame_calibration(&t_c_ee, &t_b_ee), &t_c_b, 1e-9));
    }
}
