use std::f64::consts::FRAC_PI_2;

use nalgebra::{Vector3, Vector6};
use occlufuse::geometry::{pose_error, CameraModel, Pose6, RigidTransform};
use occlufuse::render::render_mask;
use occlufuse::shape::ShapePrimitive;
use occlufuse::vision::{brute_force_pose_search, default_steps, estimate_jacobian, estimate_pose_vision, PoseLattice, VisionOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Camera at the origin looking down +z, so camera depth is world z.
fn camera() -> CameraModel {
    CameraModel::new(300.0, 300.0, 160.0, 120.0, 320, 240, RigidTransform::identity()).unwrap()
}

fn forearm() -> ShapePrimitive {
    ShapePrimitive::capsule(0.045, 0.30).unwrap()
}

fn random_offset(rng: &mut ChaCha8Rng, pos: f64, deg: f64) -> Vector6<f64> {
    let r = deg.to_radians();
    Vector6::new(
        rng.random_range(-pos..pos),
        rng.random_range(-pos..pos),
        rng.random_range(-pos..pos),
        rng.random_range(-r..r),
        rng.random_range(-r..r),
        0.0,
    )
}

/// Score change per finite-difference step, which makes the axes comparable.
fn scaled_gradient_norm(mask: &occlufuse::render::Mask, pose: &Pose6) -> f64 {
    let steps = default_steps(pose, &camera(), 0.5f64.to_radians());
    let g = estimate_jacobian(mask, pose, &forearm(), &camera(), &[], &steps).unwrap();
    g.component_mul(&steps).norm()
}

#[test]
fn gradient_nearly_vanishes_at_the_lattice_optimum() {
    let truth = Pose6::from_xyz_rpy(0.01, 0.0, 1.2, FRAC_PI_2, 0.2, 0.0);
    let mask = render_mask(&forearm(), &truth, &camera(), &[]);
    let half = Vector6::new(0.02, 0.02, 0.02, 0.1, 0.1, 0.1);
    let lattice = PoseLattice {
        center: truth,
        half_extent: half,
        points_per_axis: 3,
    };
    let (best, score) = brute_force_pose_search(&mask, &lattice, &forearm(), &camera()).unwrap();
    assert_eq!(score, 1.0);

    // walk from a corner of the lattice to the optimum
    let start = truth.offset(&Vector6::new(0.02, -0.02, 0.02, 0.1, -0.1, 0.0));
    let path_max = (0..=10)
        .map(|i| {
            let s = i as f64 / 10.0;
            let p = Pose6::from_vector(&(start.to_vector() * (1.0 - s) + best.to_vector() * s));
            scaled_gradient_norm(&mask, &p)
        })
        .fold(0.0, f64::max);
    let at_optimum = scaled_gradient_norm(&mask, &best);
    assert!(path_max > 0.0);
    assert!(at_optimum < 0.1 * path_max, "{at_optimum} vs {path_max}");
}

#[test]
fn ascent_never_ends_below_its_prior() {
    let cam = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..8 {
        let truth = Pose6::from_xyz_rpy(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.8..1.5), 1.3, 0.2, 0.0);
        let mask = render_mask(&forearm(), &truth, &cam, &[]);
        let prior = truth.offset(&random_offset(&mut rng, 0.02, 8.0));
        let prior_score = occlufuse::vision::mask_overlap(&mask, &render_mask(&forearm(), &prior, &cam, &[])).unwrap();
        let options = VisionOptions::default();
        let est = estimate_pose_vision(&mask, &prior, &forearm(), &cam, &[], &options).unwrap();
        assert!(est.score >= prior_score, "{} < {prior_score}", est.score);
        assert!(est.iterations <= options.max_iterations);
        assert!((-1.0..=1.0).contains(&est.score));
    }
}

#[test]
fn depth_error_grows_with_distance_and_dominates_far_away() {
    let cam = camera();
    let distances = [1.0, 2.0, 4.0, 6.0, 8.0];
    let mut rmse = Vec::new();
    let mut axis_rms = Vec::new();
    for &d in &distances {
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
        let mut sq = Vector3::zeros();
        let n = 6;
        for _ in 0..n {
            let truth = Pose6::from_xyz_rpy(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), d, FRAC_PI_2, rng.random_range(-0.3..0.3), 0.0);
            let mask = render_mask(&forearm(), &truth, &cam, &[]);
            let prior = truth.offset(&random_offset(&mut rng, 0.01, 2.0));
            let est = estimate_pose_vision(&mask, &prior, &forearm(), &cam, &[], &VisionOptions::default()).unwrap();
            let e = pose_error(&est.pose, &truth);
            sq += Vector3::new(e[0] * e[0], e[1] * e[1], e[2] * e[2]);
        }
        let per_axis = (sq / n as f64).map(f64::sqrt);
        rmse.push(per_axis.norm());
        axis_rms.push(per_axis);
    }
    println!("rmse by distance {distances:?}: {rmse:?}");
    assert!(rmse[0] < rmse[2] && rmse[2] < rmse[4], "{rmse:?}");
    for (i, &d) in distances.iter().enumerate() {
        if d >= 6.0 {
            let a = axis_rms[i];
            assert!(a.z > a.x && a.z > a.y, "at {d} m: {a:?}");
        }
    }
}
