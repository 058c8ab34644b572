//! Capacitive proximity sensor model.
//!
//! The electrode response to an object at distance `d` is
//! `v(d) = a1 / (1 + a2 d^2) + a3`, a decreasing curve from `a1 + a3` at
//! contact down to the no-object baseline `a3`. On top of that the sensor
//! reports the position of the nearest surface point, with a Gaussian error
//! that grows with distance.

mod fit;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose6, RigidTransform};
use crate::shape::ShapePrimitive;

pub use fit::{fit_params, FitError, FitReport};

/// Noise variance of the bare electrode output, 6.2 mV^2.
pub const ELECTRODE_NOISE_VARIANCE_V2: f64 = 6.2e-6;
/// Default detection radius.
pub const DEFAULT_RANGE_M: f64 = 0.15;
/// Position error standard deviation at contact.
pub const DEFAULT_SIGMA0_M: f64 = 0.2e-3;
/// Quadratic growth of the position error with distance.
pub const DEFAULT_NOISE_GROWTH_PER_M2: f64 = 400.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SensorError {
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("voltage {v} V is outside the resolvable range ({lo} V, {hi} V]")]
    OutOfRange { v: f64, lo: f64, hi: f64 },
    #[error("trace has zero dynamic range")]
    Degenerate,
    #[error("empty trace")]
    EmptyTrace,
    #[error("noise variance must be positive for an SNR")]
    NoNoise,
    #[error("invalid sensor parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Distance-dependent standard deviation of the reported surface point:
/// `sigma0 * (1 + growth * d^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionNoise {
    pub sigma0_m: f64,
    pub growth_per_m2: f64,
}

impl Default for PositionNoise {
    fn default() -> Self {
        Self {
            sigma0_m: DEFAULT_SIGMA0_M,
            growth_per_m2: DEFAULT_NOISE_GROWTH_PER_M2,
        }
    }
}

impl PositionNoise {
    pub const NONE: PositionNoise = PositionNoise {
        sigma0_m: 0.0,
        growth_per_m2: 0.0,
    };

    pub fn std_at(&self, d: f64) -> f64 {
        self.sigma0_m * (1.0 + self.growth_per_m2 * d * d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// V
    pub a1: f64,
    /// 1/m^2
    pub a2: f64,
    /// V
    pub a3: f64,
    /// V^2
    pub noise_variance: f64,
    /// Sensor frame in its parent (link) frame.
    pub mount: RigidTransform,
    /// Detection radius, m.
    pub range: f64,
    pub position_noise: PositionNoise,
}

impl SensorModel {
    pub fn new(a1: f64, a2: f64, a3: f64, noise_variance: f64, range: f64) -> Result<Self, SensorError> {
        let m = Self {
            a1,
            a2,
            a3,
            noise_variance,
            mount: RigidTransform::identity(),
            range,
            position_noise: PositionNoise::default(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Synthetic forearm calibration. The curve is shaped so the SNR of the
    /// object signal drops below 1 dB a little beyond 15 cm.
    pub fn forearm() -> Self {
        Self::new(1.0, 1.0e4, 0.35, ELECTRODE_NOISE_VARIANCE_V2, DEFAULT_RANGE_M)
            .expect("forearm defaults are valid")
    }

    pub fn with_mount(mut self, mount: RigidTransform) -> Self {
        self.mount = mount;
        self
    }

    pub fn with_position_noise(mut self, noise: PositionNoise) -> Self {
        self.position_noise = noise;
        self
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let ok = |c: bool, what| if c { Ok(()) } else { Err(SensorError::InvalidParameter(what)) };
        ok(self.a1.is_finite() && self.a1 > 0.0, "a1 > 0")?;
        ok(self.a2.is_finite() && self.a2 > 0.0, "a2 > 0")?;
        ok(self.a3.is_finite() && self.a3 >= 0.0, "a3 >= 0")?;
        ok(self.noise_variance.is_finite() && self.noise_variance >= 0.0, "noise_variance >= 0")?;
        ok(self.range.is_finite() && self.range > 0.0, "range > 0")?;
        ok(
            self.position_noise.sigma0_m >= 0.0 && self.position_noise.growth_per_m2 >= 0.0,
            "position noise >= 0",
        )?;
        Ok(())
    }

    pub fn response(&self, d: f64) -> Result<f64, SensorError> {
        if d < 0.0 || d.is_nan() {
            return Err(SensorError::NegativeDistance(d));
        }
        Ok(self.a1 / (1.0 + self.a2 * d * d) + self.a3)
    }

    /// `dv/dd`.
    pub fn response_derivative(&self, d: f64) -> f64 {
        let q = 1.0 + self.a2 * d * d;
        -2.0 * self.a1 * self.a2 * d / (q * q)
    }

    /// Distance that produces voltage `v`.
    pub fn invert_response(&self, v: f64) -> Result<f64, SensorError> {
        let hi = self.a1 + self.a3;
        if !(v > self.a3 && v <= hi) {
            return Err(SensorError::OutOfRange { v, lo: self.a3, hi });
        }
        let ratio = self.a1 / (v - self.a3) - 1.0;
        Ok((ratio.max(0.0) / self.a2).sqrt())
    }

    /// Signal-to-noise ratio of a recorded trace in dB.
    pub fn snr(&self, trace: &[f64]) -> Result<f64, SensorError> {
        if trace.is_empty() {
            return Err(SensorError::EmptyTrace);
        }
        if self.noise_variance <= 0.0 {
            return Err(SensorError::NoNoise);
        }
        let (lo, hi) = trace
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        if span <= 0.0 {
            return Err(SensorError::Degenerate);
        }
        Ok(10.0 * (span * span / (2.0 * self.noise_variance)).log10())
    }

    /// SNR of an object approaching to distance `d` from far away, i.e. the
    /// trace sweeping from the baseline `a3` to `response(d)`.
    pub fn snr_at_distance(&self, d: f64) -> Result<f64, SensorError> {
        self.snr(&[self.response(d)?, self.a3])
    }

    /// Standard deviation of each component of the reported offset at distance `d`.
    pub fn noise_std(&self, d: f64) -> f64 {
        self.position_noise.std_at(d)
    }

    /// Simulated reading of the nearest surface point of `target` placed at
    /// `target_pose`, for a sensor whose frame is `sensor_pose_world`.
    ///
    /// The offset is expressed in the sensor frame. Identical inputs and seed
    /// give identical output.
    pub fn measure(
        &self,
        sensor_pose_world: &RigidTransform,
        target: &ShapePrimitive,
        target_pose: &Pose6,
        rng_seed: u64,
    ) -> RelativePointMeasurement {
        let origin = sensor_pose_world.translation;
        let nearest = target.nearest_surface_point(target_pose, &origin);
        let d = (nearest - origin).norm();
        let noise_std = self.noise_std(d);
        let mut offset_world = nearest - origin;
        if noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let normal = Normal::new(0.0, noise_std).expect("finite std");
            offset_world += Vector3::from_fn(|_, _| normal.sample(&mut rng));
        }
        let offset = sensor_pose_world.rotation.transpose() * offset_world;
        let valid = d <= self.range && offset.norm() <= 2.0 * self.range;
        RelativePointMeasurement {
            offset,
            valid,
            noise_std,
        }
    }
}

/// Reported nearest surface point relative to the sensor origin, in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePointMeasurement {
    pub offset: Vector3<f64>,
    pub valid: bool,
    pub noise_std: f64,
}

impl RelativePointMeasurement {
    /// Measured surface point in world coordinates.
    pub fn world_point(&self, sensor_pose_world: &RigidTransform) -> Vector3<f64> {
        sensor_pose_world.apply(&self.offset)
    }
}

/// Per-object calibration record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub object_class: String,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub noise_variance: f64,
    pub range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_rms: Option<f64>,
}

impl CalibrationFile {
    pub fn from_model(object_class: impl Into<String>, m: &SensorModel) -> Self {
        Self {
            object_class: object_class.into(),
            a1: m.a1,
            a2: m.a2,
            a3: m.a3,
            noise_variance: m.noise_variance,
            range: m.range,
            residual_rms: None,
        }
    }

    pub fn to_model(&self) -> Result<SensorModel, SensorError> {
        SensorModel::new(self.a1, self.a2, self.a3, self.noise_variance, self.range)
    }
}
