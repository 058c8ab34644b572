//! Scene description: everything a simulation run needs, as plain JSON.
//!
//! Keys carry their units so a scene file can be read without the code.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::fusion::NoiseConfig;
use crate::geometry::{rpy_to_matrix, CameraModel, Pose6, RigidTransform};
use crate::kinematics::{Joint, KinematicChain, SensorMount, JOINT_COUNT};
use crate::sensor::{PositionNoise, SensorModel};
use crate::shape::ShapePrimitive;
use crate::sim::trajectory::Trajectory;
use crate::vision::VisionOptions;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scene JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

fn invalid(msg: impl std::fmt::Display) -> SceneError {
    SceneError::Invalid(msg.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    #[serde(default)]
    pub translation_m: [f64; 3],
    #[serde(default)]
    pub rpy_rad: [f64; 3],
}

impl TransformConfig {
    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            translation_m: [x, y, z],
            rpy_rad: [0.0; 3],
        }
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::new(rpy_to_matrix(&Vector3::from(self.rpy_rad)), Vector3::from(self.translation_m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub fx_px: f64,
    pub fy_px: f64,
    pub width_px: usize,
    pub height_px: usize,
    pub eye_m: [f64; 3],
    pub look_at_m: [f64; 3],
    #[serde(default = "world_up")]
    pub up: [f64; 3],
}

fn world_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

impl CameraConfig {
    pub fn to_camera(&self) -> Result<CameraModel, SceneError> {
        CameraModel::look_at(
            self.fx_px,
            self.fy_px,
            self.width_px,
            self.height_px,
            Vector3::from(self.eye_m),
            Vector3::from(self.look_at_m),
            Vector3::from(self.up),
        )
        .map_err(invalid)
    }

    pub fn distance_m(&self) -> f64 {
        (Vector3::from(self.eye_m) - Vector3::from(self.look_at_m)).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointConfig {
    pub axis: [f64; 3],
    pub offset: TransformConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountConfig {
    pub link: usize,
    pub transform: TransformConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub a1_v: f64,
    pub a2_per_m2: f64,
    pub a3_v: f64,
    pub noise_variance_v2: f64,
    pub range_m: f64,
    pub sigma0_m: f64,
    pub noise_growth_per_m2: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        let m = SensorModel::forearm();
        Self {
            a1_v: m.a1,
            a2_per_m2: m.a2,
            a3_v: m.a3,
            noise_variance_v2: m.noise_variance,
            range_m: m.range,
            sigma0_m: m.position_noise.sigma0_m,
            noise_growth_per_m2: m.position_noise.growth_per_m2,
        }
    }
}

impl SensorConfig {
    pub fn to_model(&self) -> Result<SensorModel, SceneError> {
        let m = SensorModel::new(self.a1_v, self.a2_per_m2, self.a3_v, self.noise_variance_v2, self.range_m)
            .map_err(invalid)?
            .with_position_noise(PositionNoise {
                sigma0_m: self.sigma0_m,
                growth_per_m2: self.noise_growth_per_m2,
            });
        m.validate().map_err(invalid)?;
        Ok(m)
    }
}

/// Robot arm with a pad of proximity sensors on its last link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub base: TransformConfig,
    pub joints: Vec<JointConfig>,
    pub joint_angles_rad: [f64; JOINT_COUNT],
    pub mounts: Vec<MountConfig>,
    pub sensor: SensorConfig,
}

impl Default for RigConfig {
    /// Six vertical revolute joints whose angles cancel, leaving a 3 × 5 pad
    /// of upward-facing sensors at the world origin, 5 cm × 10 cm pitch.
    fn default() -> Self {
        let mut joints = vec![
            JointConfig {
                axis: [0.0, 0.0, 1.0],
                offset: TransformConfig::translation(0.0, 0.0, 0.1),
            };
            JOINT_COUNT
        ];
        joints[JOINT_COUNT - 1].offset = TransformConfig::translation(0.0, 0.0, 0.0);
        let mounts = (0..5)
            .flat_map(|i| {
                (0..3).map(move |j| MountConfig {
                    link: JOINT_COUNT - 1,
                    transform: TransformConfig::translation(-0.05 + 0.05 * j as f64, -0.2 + 0.1 * i as f64, 0.0),
                })
            })
            .collect();
        Self {
            base: TransformConfig::translation(0.0, 0.0, -0.5),
            joints,
            joint_angles_rad: [0.3, -0.3, 0.2, -0.2, 0.1, -0.1],
            mounts,
            sensor: SensorConfig::default(),
        }
    }
}

impl RigConfig {
    pub fn chain(&self) -> Result<KinematicChain, SceneError> {
        KinematicChain::new(
            self.base.to_transform(),
            self.joints
                .iter()
                .map(|j| Joint {
                    axis: Vector3::from(j.axis),
                    offset: j.offset.to_transform(),
                })
                .collect(),
            self.mounts
                .iter()
                .map(|m| SensorMount {
                    link: m.link,
                    transform: m.transform.to_transform(),
                })
                .collect(),
        )
        .map_err(invalid)
    }

    pub fn sensor_poses(&self) -> Result<Vec<RigidTransform>, SceneError> {
        if self.joint_angles_rad.iter().any(|a| !a.is_finite()) {
            return Err(invalid("joint angles must be finite"));
        }
        Ok(self.chain()?.forward_kinematics(&self.joint_angles_rad))
    }
}

/// Where the occlusion in a time window comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum OcclusionSource {
    /// Cut a contiguous hole of a fraction drawn uniformly from the range each
    /// frame. A fraction of 1 blanks the mask.
    Degrade { min_fraction: f64, max_fraction: f64 },
    /// A solid object in the scene, rendered into the camera image.
    Occluder {
        shape: ShapePrimitive,
        position_m: [f64; 3],
        attitude_rad: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionWindow {
    pub start_s: f64,
    pub end_s: f64,
    #[serde(flatten)]
    pub source: OcclusionSource,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionSchedule {
    #[serde(default)]
    pub windows: Vec<OcclusionWindow>,
    /// Probability of flipping each remaining mask pixel.
    #[serde(default)]
    pub pixel_noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisionConfig {
    pub supersample: usize,
    pub max_iterations: usize,
    pub min_improvement: f64,
    pub rotation_step_deg: f64,
    pub polish_levels: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        let o = VisionOptions::default();
        Self {
            supersample: o.supersample,
            max_iterations: o.max_iterations,
            min_improvement: o.min_improvement,
            rotation_step_deg: o.rotation_step_rad.to_degrees(),
            polish_levels: o.polish_levels,
        }
    }
}

impl VisionConfig {
    pub fn options(&self) -> VisionOptions {
        VisionOptions {
            max_iterations: self.max_iterations,
            min_improvement: self.min_improvement,
            supersample: self.supersample,
            rotation_step_rad: self.rotation_step_deg.to_radians(),
            polish_levels: self.polish_levels,
        }
    }
}

/// Whether the trajectory was laid out to stay within the haptic pad's reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HapticRange {
    Within,
    Outside,
}

impl HapticRange {
    pub const ALL: [HapticRange; 2] = [HapticRange::Within, HapticRange::Outside];

    pub fn as_str(&self) -> &'static str {
        match self {
            HapticRange::Within => "within",
            HapticRange::Outside => "outside",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    pub frame_rate_hz: f64,
    pub substep_s: f64,
    pub target: ShapePrimitive,
    pub trajectory: Trajectory,
    pub camera: CameraConfig,
    #[serde(default)]
    pub occlusion: OcclusionSchedule,
    #[serde(default)]
    pub rig: RigConfig,
    pub haptic_range: HapticRange,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub vision: VisionConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenes always serialize")
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.frame_rate_hz).floor() as usize
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s must be positive"));
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return Err(invalid("frame_rate_hz must be positive"));
        }
        if !(self.substep_s > 0.0 && self.substep_s <= 1.0 / self.frame_rate_hz) {
            return Err(invalid("substep_s must be positive and no longer than a frame"));
        }
        if self.frame_count() == 0 {
            return Err(invalid("scene is shorter than one frame"));
        }
        self.target.validate().map_err(invalid)?;
        self.trajectory.validate().map_err(invalid)?;
        self.camera.to_camera()?;
        self.rig.sensor_poses()?;
        self.rig.sensor.to_model()?;
        self.noise.validate().map_err(invalid)?;
        if !(self.noise.omega_n_rad_s * self.substep_s < 1.0) {
            return Err(invalid("omega_n_rad_s * substep_s must stay below 1"));
        }
        if self.vision.supersample == 0 || self.vision.max_iterations == 0 || !(self.vision.rotation_step_deg > 0.0) {
            return Err(invalid("vision settings must be positive"));
        }
        if !(0.0..=0.1).contains(&self.occlusion.pixel_noise) {
            return Err(invalid("pixel_noise must lie in [0, 0.1]"));
        }
        for w in &self.occlusion.windows {
            if !(w.start_s <= w.end_s) {
                return Err(invalid("occlusion window ends before it starts"));
            }
            match &w.source {
                OcclusionSource::Degrade { min_fraction, max_fraction } => {
                    let ok = (0.0..=1.0).contains(min_fraction) && (0.0..=1.0).contains(max_fraction) && min_fraction <= max_fraction;
                    if !ok {
                        return Err(invalid("occlusion fractions must satisfy 0 <= min <= max <= 1"));
                    }
                }
                OcclusionSource::Occluder { shape, .. } => shape.validate().map_err(invalid)?,
            }
        }
        Ok(())
    }

    /// The window active at `t`; the first match wins.
    pub fn occlusion_at(&self, t: f64) -> Option<&OcclusionWindow> {
        self.occlusion.windows.iter().find(|w| w.start_s <= t && t < w.end_s)
    }

    pub fn occluder_pose(position_m: &[f64; 3], attitude_rad: &[f64; 3]) -> Pose6 {
        Pose6::new(Vector3::from(*position_m), Vector3::from(*attitude_rad))
    }
}

/// The bundled example: the forearm bobbing over the pad, seen from 2 m,
/// with a cut-out window followed by a box passing in front of the camera.
pub fn example_scenario() -> Scenario {
    use std::f64::consts::FRAC_PI_2;
    use crate::sim::trajectory::Keyframe;
    let kf = |t_s: f64, z: f64, roll: f64, pitch: f64| Keyframe {
        t_s,
        position_m: [0.0, 0.01 * t_s, z],
        attitude_rad: [FRAC_PI_2 + roll, pitch, 0.4],
    };
    Scenario {
        name: "example".into(),
        seed: 7,
        duration_s: 3.0,
        frame_rate_hz: 30.0,
        substep_s: 1e-3,
        target: ShapePrimitive::capsule(0.045, 0.30).expect("valid forearm capsule"),
        trajectory: Trajectory {
            keyframes: vec![
                kf(0.0, 0.09, 0.0, 0.0),
                kf(1.0, 0.15, 0.05, 0.04),
                kf(2.0, 0.08, -0.05, 0.0),
                kf(3.0, 0.14, 0.0, -0.04),
            ],
        },
        camera: CameraConfig {
            fx_px: 600.0,
            fy_px: 600.0,
            width_px: 320,
            height_px: 240,
            eye_m: [1.8, -0.6, 0.8],
            look_at_m: [0.0, 0.0, 0.12],
            up: world_up(),
        },
        occlusion: OcclusionSchedule {
            windows: vec![
                OcclusionWindow {
                    start_s: 0.8,
                    end_s: 1.6,
                    source: OcclusionSource::Degrade {
                        min_fraction: 0.4,
                        max_fraction: 0.6,
                    },
                },
                OcclusionWindow {
                    start_s: 2.0,
                    end_s: 2.7,
                    source: OcclusionSource::Occluder {
                        shape: ShapePrimitive::cuboid([0.02, 0.05, 0.3]).expect("valid box"),
                        position_m: [0.9, -0.3, 0.46],
                        attitude_rad: [0.0; 3],
                    },
                },
            ],
            pixel_noise: 0.0,
        },
        rig: RigConfig::default(),
        haptic_range: HapticRange::Within,
        noise: NoiseConfig::default(),
        vision: VisionConfig {
            supersample: 1,
            ..VisionConfig::default()
        },
    }
}
