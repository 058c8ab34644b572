//! Object pose from a handful of nearest-surface-point readings.
//!
//! Each valid sensor reading gives a world point `m_s` that should coincide
//! with the point of the known shape nearest to that sensor. The pose is the
//! damped Gauss-Newton minimizer of
//!
//! ```text
//! sum_s | nearest(shape, pose, sensor_s) - m_s |^2
//! ```
//!
//! Rotations about a symmetry axis of the shape do not change any residual;
//! those components are held at the prior and reported with a sentinel
//! variance.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};

use crate::geometry::{Pose6, RigidTransform};
use crate::sensor::RelativePointMeasurement;
use crate::shape::ShapePrimitive;

/// Variance reported for pose components the solver cannot observe.
pub const UNOBSERVABLE_VARIANCE: f64 = 1e6;

const FD_STEP: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HapticError {
    #[error("{got} valid measurements, {needed} required")]
    InsufficientMeasurements { got: usize, needed: usize },
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("degenerate sensor geometry (condition number {0:.3e})")]
    DegenerateGeometry(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HapticMode {
    /// Position and every observable attitude component; needs 3 readings.
    Full,
    /// Attitude held at the prior; one reading can be enough.
    PositionOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HapticOptions {
    pub mode: HapticMode,
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub step_tolerance: f64,
    pub max_condition: f64,
}

impl Default for HapticOptions {
    fn default() -> Self {
        Self {
            mode: HapticMode::Full,
            max_iterations: 50,
            initial_lambda: 1e-3,
            step_tolerance: 1e-7,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HapticPoseEstimate {
    pub pose: Pose6,
    /// RMS distance between predicted and measured surface points, m.
    pub residual_rms: f64,
    pub covariance: Matrix6<f64>,
    pub n_measurements: usize,
    pub iterations: usize,
    /// Pose components that were estimated (the rest stayed at the prior).
    pub free_axes: [bool; 6],
}

impl HapticPoseEstimate {
    /// Trace of the covariance over the estimated components only.
    pub fn observable_trace(&self) -> f64 {
        (0..6)
            .filter(|&i| self.free_axes[i])
            .map(|i| self.covariance[(i, i)])
            .sum()
    }
}

struct Problem<'a> {
    sensors: Vec<Vector3<f64>>,
    targets: Vec<Vector3<f64>>,
    shape: &'a ShapePrimitive,
    prior: Pose6,
    free: Vec<usize>,
}

impl Problem<'_> {
    fn pose(&self, params: &DVector<f64>) -> Pose6 {
        let mut v = self.prior.to_vector();
        for (k, &axis) in self.free.iter().enumerate() {
            v[axis] = params[k];
        }
        Pose6::from_vector(&v)
    }

    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        let pose = self.pose(params);
        let t = RigidTransform::from_pose(&pose);
        let inv = t.inverse();
        let mut r = DVector::zeros(3 * self.sensors.len());
        for (s, (sensor, target)) in self.sensors.iter().zip(&self.targets).enumerate() {
            let local = inv.apply(sensor);
            let predicted = t.apply(&self.shape.nearest_surface_point_local(&local));
            r.fixed_rows_mut::<3>(3 * s).copy_from(&(predicted - target));
        }
        r
    }

    fn jacobian(&self, params: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(3 * self.sensors.len(), params.len());
        for k in 0..params.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[k] += FD_STEP;
            minus[k] -= FD_STEP;
            let col = (self.residuals(&plus) - self.residuals(&minus)) / (2.0 * FD_STEP);
            j.set_column(k, &col);
        }
        j
    }
}

pub fn estimate_pose_haptic(
    measurements: &[(RigidTransform, RelativePointMeasurement)],
    shape: &ShapePrimitive,
    prior: &Pose6,
    options: &HapticOptions,
) -> Result<HapticPoseEstimate, HapticError> {
    let valid: Vec<_> = measurements.iter().filter(|(_, m)| m.valid).collect();
    let needed = match options.mode {
        HapticMode::Full => 3,
        HapticMode::PositionOnly => 1,
    };
    if valid.len() < needed {
        return Err(HapticError::InsufficientMeasurements {
            got: valid.len(),
            needed,
        });
    }

    let symmetric = shape.symmetric_attitude_axes();
    let mut free_axes = [true, true, true, false, false, false];
    if options.mode == HapticMode::Full {
        for k in 0..3 {
            free_axes[3 + k] = !symmetric[k];
        }
    }
    let free: Vec<usize> = (0..6).filter(|&i| free_axes[i]).collect();
    let problem = Problem {
        sensors: valid.iter().map(|(t, _)| t.translation).collect(),
        targets: valid.iter().map(|(t, m)| m.world_point(t)).collect(),
        shape,
        prior: *prior,
        free: free.clone(),
    };
    let prior_vec = prior.to_vector();
    let mut params = DVector::from_iterator(free.len(), free.iter().map(|&i| prior_vec[i]));
    let mut r = problem.residuals(&params);
    let mut cost = r.norm_squared();
    let mut lambda = options.initial_lambda;
    let mut jac = problem.jacobian(&params);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let damped = &jtj + DMatrix::identity(free.len(), free.len()) * lambda;
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let step = -chol.solve(&jtr);
        let candidate = &params + &step;
        let r_new = problem.residuals(&candidate);
        let cost_new = r_new.norm_squared();
        if cost_new <= cost {
            params = candidate;
            r = r_new;
            cost = cost_new;
            lambda = (lambda / 10.0).max(1e-12);
            jac = problem.jacobian(&params);
            if step.norm() < options.step_tolerance {
                converged = true;
                break;
            }
        } else {
            if step.norm() < options.step_tolerance {
                // the step that failed to improve is already below tolerance
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
    }
    if !converged {
        return Err(HapticError::NoConvergence(iterations));
    }

    let jtj = jac.transpose() * &jac;
    let eig = jtj.clone().symmetric_eigen();
    let (min_eig, max_eig) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = if min_eig > 0.0 { max_eig / min_eig } else { f64::INFINITY };
    if condition > options.max_condition {
        return Err(HapticError::DegenerateGeometry(condition));
    }

    let n_res = r.len();
    let dof = n_res.saturating_sub(free.len()).max(1);
    let nominal = valid.iter().map(|(_, m)| m.noise_std * m.noise_std).sum::<f64>() / valid.len() as f64;
    let scale = (cost / dof as f64).max(nominal).max(1e-12);
    let inv = jtj.try_inverse().ok_or(HapticError::DegenerateGeometry(condition))?;
    let mut covariance = Matrix6::zeros();
    for i in 0..6 {
        if !free_axes[i] {
            covariance[(i, i)] = UNOBSERVABLE_VARIANCE;
        }
    }
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            covariance[(i, j)] = inv[(a, b)] * scale;
        }
    }
    covariance = (covariance + covariance.transpose()) * 0.5;

    Ok(HapticPoseEstimate {
        pose: problem.pose(&params),
        residual_rms: (cost / valid.len() as f64).sqrt(),
        covariance,
        n_measurements: valid.len(),
        iterations,
        free_axes: {
            let mut f = [false; 6];
            for &i in &free {
                f[i] = true;
            }
            f
        },
    })
}

/// Convenience: the free-axis mask as a 0/1 vector.
pub fn free_mask(estimate: &HapticPoseEstimate) -> Vector6<f64> {
    Vector6::from_fn(|i, _| if estimate.free_axes[i] { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{PositionNoise, SensorModel};
    use rand::{Rng, SeedableRng};

    fn sphere() -> ShapePrimitive {
        ShapePrimitive::sphere(0.05).unwrap()
    }

    /// Sensors on the coordinate axes around `center`, at `dist` from the surface.
    fn axis_sensors(center: &Vector3<f64>, dist: f64, n: usize) -> Vec<RigidTransform> {
        let dirs = [
            Vector3::x(),
            Vector3::y(),
            Vector3::z(),
            -Vector3::x(),
            -Vector3::y(),
            -Vector3::z(),
            Vector3::new(1.0, 1.0, 0.0).normalize(),
            Vector3::new(0.0, 1.0, 1.0).normalize(),
        ];
        dirs[..n]
            .iter()
            .map(|d| RigidTransform::from_translation(center + d * (0.05 + dist)))
            .collect()
    }

    fn read(
        model: &SensorModel,
        sensors: &[RigidTransform],
        shape: &ShapePrimitive,
        truth: &Pose6,
        seed: u64,
    ) -> Vec<(RigidTransform, RelativePointMeasurement)> {
        sensors
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, model.measure(s, shape, truth, seed * 100 + i as u64)))
            .collect()
    }

    fn noiseless() -> SensorModel {
        SensorModel::forearm().with_position_noise(PositionNoise::NONE)
    }

    /// Independent check: a shrinking grid search over the center.
    fn grid_refine(meas: &[(RigidTransform, RelativePointMeasurement)], start: Vector3<f64>) -> Vector3<f64> {
        let shape = sphere();
        let cost = |c: &Vector3<f64>| -> f64 {
            let pose = Pose6::new(*c, Vector3::zeros());
            meas.iter()
                .map(|(t, m)| (shape.nearest_surface_point(&pose, &t.translation) - m.world_point(t)).norm_squared())
                .sum()
        };
        let mut best = start;
        let mut h = 0.01;
        while h > 1e-9 {
            let mut improved = true;
            while improved {
                improved = false;
                for axis in 0..3 {
                    for sign in [-1.0, 1.0] {
                        let mut c = best;
                        c[axis] += sign * h;
                        if cost(&c) < cost(&best) {
                            best = c;
                            improved = true;
                        }
                    }
                }
            }
            h /= 2.0;
        }
        best
    }

    #[test]
    fn sphere_center_from_four_axis_sensors() {
        let center = Vector3::new(0.02, -0.01, 0.12);
        let truth = Pose6::new(center, Vector3::zeros());
        let meas = read(&noiseless(), &axis_sensors(&center, 0.04, 4), &sphere(), &truth, 0);
        let prior = Pose6::new(center + Vector3::new(0.01, -0.008, 0.006), Vector3::zeros());
        let est = estimate_pose_haptic(&meas, &sphere(), &prior, &HapticOptions::default()).unwrap();
        let oracle = grid_refine(&meas, prior.position);
        assert!((oracle - center).norm() < 1e-6, "oracle {oracle:?}");
        assert!((est.pose.position - center).norm() < 1e-6, "{est:?}");
        assert!((est.pose.position - oracle).norm() < 1e-6);
        assert_eq!(est.free_axes, [true, true, true, false, false, false]);
        assert_eq!(est.covariance[(4, 4)], UNOBSERVABLE_VARIANCE);
    }

    #[test]
    fn prior_at_truth_converges_immediately() {
        let center = Vector3::new(0.0, 0.0, 0.1);
        let truth = Pose6::new(center, Vector3::zeros());
        let meas = read(&noiseless(), &axis_sensors(&center, 0.03, 4), &sphere(), &truth, 0);
        let est = estimate_pose_haptic(&meas, &sphere(), &truth, &HapticOptions::default()).unwrap();
        assert!(est.iterations <= 2);
        assert!(est.residual_rms < 1e-9);
    }

    #[test]
    fn two_readings_cannot_give_full_pose() {
        let center = Vector3::new(0.0, 0.0, 0.1);
        let truth = Pose6::new(center, Vector3::zeros());
        let meas = read(&noiseless(), &axis_sensors(&center, 0.03, 2), &sphere(), &truth, 0);
        assert_eq!(
            estimate_pose_haptic(&meas, &sphere(), &truth, &HapticOptions::default()),
            Err(HapticError::InsufficientMeasurements { got: 2, needed: 3 })
        );
        let opts = HapticOptions {
            mode: HapticMode::PositionOnly,
            ..Default::default()
        };
        assert!(estimate_pose_haptic(&meas, &sphere(), &truth, &opts).is_ok());
    }

    #[test]
    fn capsule_pose_with_frozen_symmetry_axis() {
        let capsule = ShapePrimitive::capsule(0.045, 0.30).unwrap();
        let truth = Pose6::from_xyz_rpy(0.01, 0.0, 0.12, std::f64::consts::FRAC_PI_2 + 0.05, 0.08, 0.3);
        // a pad of sensors underneath, reaching past both ends
        let sensors: Vec<_> = (0..5)
            .flat_map(|i| {
                (0..3).map(move |j| {
                    RigidTransform::from_translation(Vector3::new(-0.05 + 0.05 * j as f64, -0.2 + 0.1 * i as f64, 0.0))
                })
            })
            .collect();
        let meas = read(&noiseless(), &sensors, &capsule, &truth, 0);
        let prior = truth.offset(&Vector6::new(0.01, -0.01, 0.01, -0.04, 0.03, 0.2));
        let est = estimate_pose_haptic(&meas, &capsule, &prior, &HapticOptions::default()).unwrap();
        assert!((est.pose.position - truth.position).norm() < 1e-6, "{est:?}");
        assert!((est.pose.attitude.x - truth.attitude.x).abs() < 1e-6);
        assert!((est.pose.attitude.y - truth.attitude.y).abs() < 1e-6);
        // yaw is the capsule axis and stays where the prior put it
        assert_eq!(est.pose.attitude.z, prior.attitude.z);
        assert_eq!(est.covariance[(5, 5)], UNOBSERVABLE_VARIANCE);
    }

    #[test]
    fn estimate_is_translation_equivariant() {
        let center = Vector3::new(0.01, 0.0, 0.11);
        let truth = Pose6::new(center, Vector3::zeros());
        let model = SensorModel::forearm();
        let sensors = axis_sensors(&center, 0.03, 6);
        let meas = read(&model, &sensors, &sphere(), &truth, 7);
        let prior = Pose6::new(center + Vector3::new(0.005, 0.0, 0.0), Vector3::zeros());
        let a = estimate_pose_haptic(&meas, &sphere(), &prior, &HapticOptions::default()).unwrap();

        let shift = Vector3::new(0.3, -1.2, 0.7);
        let moved: Vec<_> = meas
            .iter()
            .map(|(t, m)| (RigidTransform::new(t.rotation, t.translation + shift), *m))
            .collect();
        let prior_moved = Pose6::new(prior.position + shift, prior.attitude);
        let b = estimate_pose_haptic(&moved, &sphere(), &prior_moved, &HapticOptions::default()).unwrap();
        assert!((b.pose.position - a.pose.position - shift).norm() < 1e-6);
    }

    #[test]
    fn duplicate_reading_does_not_raise_residual() {
        let center = Vector3::new(0.0, 0.02, 0.1);
        let truth = Pose6::new(center, Vector3::zeros());
        let mut meas = read(&noiseless(), &axis_sensors(&center, 0.05, 4), &sphere(), &truth, 0);
        let prior = Pose6::new(center + Vector3::new(0.0, 0.01, 0.0), Vector3::zeros());
        let a = estimate_pose_haptic(&meas, &sphere(), &prior, &HapticOptions::default()).unwrap();
        meas.push(meas[1]);
        let b = estimate_pose_haptic(&meas, &sphere(), &prior, &HapticOptions::default()).unwrap();
        assert!(b.residual_rms <= a.residual_rms.max(1e-12));
    }

    #[test]
    fn covariance_shrinks_with_more_readings() {
        let center = Vector3::new(0.0, 0.0, 0.1);
        let truth = Pose6::new(center, Vector3::zeros());
        let mut prev = f64::INFINITY;
        for n in 3..=8 {
            let meas = read(&noiseless(), &axis_sensors(&center, 0.04, n), &sphere(), &truth, 0);
            let est = estimate_pose_haptic(&meas, &sphere(), &truth, &HapticOptions::default()).unwrap();
            let tr = est.observable_trace();
            assert!(tr < prev, "n = {n}: {tr} !< {prev}");
            prev = tr;
        }
    }

    #[test]
    fn sub_millimeter_inside_range() {
        let model = SensorModel::forearm();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut sq = 0.0;
        let trials = 200;
        for t in 0..trials {
            let center = Vector3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), 0.1);
            let truth = Pose6::new(center, Vector3::zeros());
            let dist = rng.random_range(0.01..0.10);
            let meas = read(&model, &axis_sensors(&center, dist, 6), &sphere(), &truth, t);
            let est = estimate_pose_haptic(&meas, &sphere(), &Pose6::new(Vector3::new(0.0, 0.0, 0.1), Vector3::zeros()), &HapticOptions::default())
                .unwrap();
            sq += (est.pose.position - center).norm_squared();
        }
        let rmse = (sq / trials as f64).sqrt();
        assert!(rmse < 1e-3, "rmse {rmse}");
    }
}
