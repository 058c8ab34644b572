//! Piecewise-cubic pose trajectories through timed keyframes.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t_s: f64,
    pub position_m: [f64; 3],
    /// Roll, pitch, yaw. Consecutive keyframes are interpolated without wrapping.
    pub attitude_rad: [f64; 3],
}

impl Keyframe {
    fn vector(&self) -> Vector6<f64> {
        let [x, y, z] = self.position_m;
        let [r, p, w] = self.attitude_rad;
        Vector6::new(x, y, z, r, p, w)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrajectoryError {
    #[error("a trajectory needs at least one keyframe")]
    Empty,
    #[error("keyframe times must be finite and strictly increasing (index {0})")]
    NotIncreasing(usize),
}

/// Catmull-Rom style cubic Hermite spline; held constant outside the keyframe span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub keyframes: Vec<Keyframe>,
}

impl Trajectory {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self, TrajectoryError> {
        let t = Self { keyframes };
        t.validate()?;
        Ok(t)
    }

    pub fn stationary(pose: &Pose6) -> Self {
        let p = pose.position;
        let a = pose.attitude;
        Self {
            keyframes: vec![Keyframe {
                t_s: 0.0,
                position_m: [p.x, p.y, p.z],
                attitude_rad: [a.x, a.y, a.z],
            }],
        }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.keyframes.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        for (i, k) in self.keyframes.iter().enumerate() {
            let bad = !k.t_s.is_finite()
                || k.position_m.iter().chain(&k.attitude_rad).any(|v| !v.is_finite())
                || (i > 0 && k.t_s <= self.keyframes[i - 1].t_s);
            if bad {
                return Err(TrajectoryError::NotIncreasing(i));
            }
        }
        Ok(())
    }

    fn tangent(&self, i: usize) -> Vector6<f64> {
        let k = &self.keyframes;
        let n = k.len();
        if n < 2 {
            return Vector6::zeros();
        }
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        (k[b].vector() - k[a].vector()) / (k[b].t_s - k[a].t_s)
    }

    pub fn sample(&self, t: f64) -> Pose6 {
        let k = &self.keyframes;
        let last = k.len() - 1;
        if t <= k[0].t_s || last == 0 {
            return Pose6::from_vector(&k[0].vector());
        }
        if t >= k[last].t_s {
            return Pose6::from_vector(&k[last].vector());
        }
        let i = k.partition_point(|kf| kf.t_s <= t) - 1;
        let h = k[i + 1].t_s - k[i].t_s;
        let s = (t - k[i].t_s) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let v = k[i].vector() * h00 + self.tangent(i) * (h10 * h) + k[i + 1].vector() * h01 + self.tangent(i + 1) * (h11 * h);
        Pose6::from_vector(&v)
    }

    pub fn duration(&self) -> f64 {
        self.keyframes.last().map_or(0.0, |k| k.t_s) - self.keyframes[0].t_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kf(t: f64, x: f64) -> Keyframe {
        Keyframe {
            t_s: t,
            position_m: [x, 0.0, 0.0],
            attitude_rad: [0.0, 0.0, 0.1 * x],
        }
    }

    #[test]
    fn passes_through_keyframes() {
        let tr = Trajectory::new(vec![kf(0.0, 0.0), kf(1.0, 1.0), kf(2.5, -0.5), kf(3.0, 0.2)]).unwrap();
        for k in &tr.keyframes {
            let p = tr.sample(k.t_s);
            assert!((p.position.x - k.position_m[0]).abs() < 1e-12);
            assert!((p.attitude.z - k.attitude_rad[2]).abs() < 1e-12);
        }
        assert_eq!(tr.sample(-1.0), tr.sample(0.0));
        assert_eq!(tr.sample(10.0), tr.sample(3.0));
    }

    #[test]
    fn reproduces_a_straight_line() {
        // evenly spaced collinear keyframes give linear interpolation
        let tr = Trajectory::new((0..5).map(|i| kf(i as f64, 2.0 * i as f64)).collect()).unwrap();
        for j in 0..40 {
            let t = j as f64 * 0.1;
            assert!((tr.sample(t).position.x - 2.0 * t).abs() < 1e-12, "{t}");
        }
    }

    #[test]
    fn is_continuous_across_knots() {
        let tr = Trajectory::new(vec![kf(0.0, 0.0), kf(0.7, 0.3), kf(1.1, -0.2), kf(2.0, 0.5)]).unwrap();
        for k in &tr.keyframes[1..3] {
            let before = tr.sample(k.t_s - 1e-9).position.x;
            let after = tr.sample(k.t_s + 1e-9).position.x;
            assert!((before - after).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_bad_keyframes() {
        assert_eq!(Trajectory::new(vec![]), Err(TrajectoryError::Empty));
        assert_eq!(
            Trajectory::new(vec![kf(0.0, 0.0), kf(0.0, 1.0)]),
            Err(TrajectoryError::NotIncreasing(1))
        );
    }
}
