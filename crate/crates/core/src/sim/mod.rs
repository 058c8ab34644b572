//! Seeded end-to-end scenarios: truth trajectory, synthetic camera and
//! proximity readings, three observers side by side, and result tables.
//!
//! Every scenario runs three observers on the same measurements: the fused
//! one, one that only sees the camera, and one that only sees the haptic pad.
//! Both estimators are seeded with the previous fused output, so the three
//! observers differ only in which readings they are allowed to use.

pub mod records;
pub mod scene;
pub mod sweep;
pub mod table;
pub mod trajectory;

use nalgebra::{Matrix6, Vector3, Vector6};

use crate::fusion::{self, FusionError, MeasurementPair, ModalityReading, NoiseConfig, ObserverState};
use crate::geometry::{pose_error, CameraModel, Pose6, RigidTransform};
use crate::haptic::{estimate_pose_haptic, HapticOptions};
use crate::render::{degrade_mask, occlusion_fraction, Mask, Renderer};
use crate::sensor::RelativePointMeasurement;
use crate::shape::ShapePrimitive;
use crate::vision::{estimate_pose_vision, VisionOptions};

pub use records::{read_records, records_to_csv, write_records, FrameRecord, RecordError};
pub use scene::{HapticRange, OcclusionSource, Scenario, SceneError};
pub use sweep::{sweep, SweepError, SweepGrid, SweepReport};
pub use table::{aggregate, DistanceBand, OcclusionBand, ResultTable};
pub use trajectory::{Keyframe, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("observer failed at t = {t_s:.3} s: {source}")]
    Observer { t_s: f64, source: FusionError },
}

/// SplitMix64 finalizer over a seed and two stream indices.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed;
    for v in [a, b] {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(v.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const STREAM_MASK: u64 = 0;
const STREAM_FRACTION: u64 = 1;
const STREAM_SENSOR: u64 = 16;

fn frame_time(s: &Scenario, frame: usize) -> f64 {
    frame as f64 / s.frame_rate_hz
}

fn unit_from_seed(seed: u64) -> f64 {
    (seed >> 11) as f64 / (1u64 << 53) as f64
}

/// Position error norm and attitude error norm over the axes a shape can show.
pub fn pose_errors(estimate: &Pose6, truth: &Pose6, symmetric: [bool; 3]) -> (f64, f64) {
    let e = pose_error(estimate, truth);
    let pos = e.fixed_rows::<3>(0).norm();
    let att = (0..3).filter(|&i| !symmetric[i]).map(|i| e[3 + i] * e[3 + i]).sum::<f64>().sqrt();
    (pos, att)
}

/// One observer plus the low-passed pose it reports.
struct Track {
    state: ObserverState,
    output: Pose6,
}

impl Track {
    fn new(x0: Pose6, p0: Matrix6<f64>, noise: &NoiseConfig, dt: f64) -> Result<Self, FusionError> {
        Ok(Self {
            state: ObserverState::new(x0, p0, noise, dt)?,
            output: x0,
        })
    }

    /// Holds `meas` over `n` substeps of `dt`; without any valid reading the
    /// observer only predicts.
    fn advance(&mut self, meas: &MeasurementPair, n: usize, dt: f64, noise: &NoiseConfig, q: &Matrix6<f64>) -> Result<(), FusionError> {
        let has_reading = meas.vision.is_valid() || meas.haptic.is_valid();
        for _ in 0..n {
            let mut next = fusion::predict(&self.state, &Vector6::zeros(), dt, q)?;
            if has_reading {
                next = fusion::update(&next, meas, dt, noise.sentinel)?;
            }
            let raw = next.estimate;
            self.output = fusion::lowpass(&mut next, &raw, dt, noise)?;
            self.state = next;
        }
        Ok(())
    }
}

struct VisionReading {
    pose: Pose6,
    score: f64,
    r_v_scalar: f64,
}

struct Pipeline<'a> {
    target: &'a ShapePrimitive,
    camera: CameraModel,
    renderer: Renderer,
    options: VisionOptions,
    noise: NoiseConfig,
    w_v: Matrix6<f64>,
    sensors: Vec<RigidTransform>,
    sensor_positions: Vec<Vector3<f64>>,
    symmetric: [bool; 3],
}

impl Pipeline<'_> {
    fn vision(&self, observed: &Mask, prior: &Pose6) -> Option<VisionReading> {
        let est = estimate_pose_vision(observed, prior, self.target, &self.camera, &[], &self.options).ok()?;
        let predicted = self.renderer.render(&est.pose);
        let s = fusion::occlusion_scalar(&predicted, observed).ok()?;
        Some(VisionReading {
            pose: est.pose,
            score: est.score,
            r_v_scalar: s,
        })
    }

    fn vision_reading(&self, v: &Option<VisionReading>) -> ModalityReading {
        match v {
            Some(v) => ModalityReading::valid(v.pose, self.w_v * (v.r_v_scalar + self.noise.vision_floor)),
            None => ModalityReading::invalid(self.noise.sentinel),
        }
    }

    fn haptic(&self, readings: &[(RigidTransform, RelativePointMeasurement)], prior: &Pose6) -> Option<Pose6> {
        estimate_pose_haptic(readings, self.target, prior, &HapticOptions::default()).ok().map(|e| e.pose)
    }

    fn haptic_reading(&self, h: &Option<Pose6>) -> ModalityReading {
        match h {
            // the distance is taken from the haptic fix itself, so an observer
            // that drifted away can still be pulled back by the pad
            Some(p) => ModalityReading::valid(
                *p,
                fusion::compute_r_c(p, &self.sensor_positions, &self.noise.haptic, self.symmetric, self.noise.sentinel),
            ),
            None => ModalityReading::invalid(self.noise.sentinel),
        }
    }
}

/// Camera image the segmentation stage would hand over at time `t`.
fn observed_mask(s: &Scenario, camera: &CameraModel, truth: &Pose6, full: &Mask, frame: u64) -> Mask {
    let seed = mix_seed(s.seed, frame, STREAM_MASK);
    let noise = s.occlusion.pixel_noise;
    let with_noise = |m: Mask| {
        if noise > 0.0 && m.target_count() > 0 {
            degrade_mask(&m, 0.0, noise, seed).unwrap_or(m)
        } else {
            m
        }
    };
    let t = frame_time(s, frame as usize);
    match s.occlusion_at(t).map(|w| &w.source) {
        None => with_noise(full.clone()),
        Some(OcclusionSource::Degrade { min_fraction, max_fraction }) => {
            let u = unit_from_seed(mix_seed(s.seed, frame, STREAM_FRACTION));
            let fraction = min_fraction + (max_fraction - min_fraction) * u;
            if fraction >= 1.0 || full.target_count() == 0 {
                return Mask::new(full.width, full.height);
            }
            degrade_mask(full, fraction, noise, seed).unwrap_or_else(|_| Mask::new(full.width, full.height))
        }
        Some(OcclusionSource::Occluder {
            shape,
            position_m,
            attitude_rad,
        }) => {
            let occluder = (*shape, Scenario::occluder_pose(position_m, attitude_rad));
            with_noise(Renderer::new(&s.target, camera, &[occluder]).render(truth))
        }
    }
}

/// Unoccluded and observed masks of frame `frame`, exactly as `run_scenario` sees them.
pub fn frame_masks(s: &Scenario, frame: usize) -> Result<(Mask, Mask), SimError> {
    s.validate()?;
    let camera = s.camera.to_camera()?;
    let truth = s.trajectory.sample(frame_time(s, frame));
    let full = Renderer::new(&s.target, &camera, &[]).render(&truth);
    let observed = observed_mask(s, &camera, &truth, &full, frame as u64);
    Ok((full, observed))
}

/// Runs a scenario frame by frame. Estimator failures become flagged
/// records; only a numerically broken observer aborts the run.
pub fn run_scenario(s: &Scenario) -> Result<Vec<FrameRecord>, SimError> {
    s.validate()?;
    let camera = s.camera.to_camera()?;
    let sensor_model = s.rig.sensor.to_model()?;
    let sensors = s.rig.sensor_poses()?;
    let pipe = Pipeline {
        target: &s.target,
        renderer: Renderer::new(&s.target, &camera, &[]),
        camera,
        options: s.vision.options(),
        noise: s.noise,
        w_v: s.noise.w_v(),
        sensor_positions: sensors.iter().map(|p| p.translation).collect(),
        sensors,
        symmetric: s.target.symmetric_attitude_axes(),
    };

    let frame_dt = 1.0 / s.frame_rate_hz;
    let n_sub = ((frame_dt / s.substep_s).round() as usize).max(1);
    let dt = frame_dt / n_sub as f64;
    let q = s.noise.q();
    let p0 = q * frame_dt;
    let x0 = s.trajectory.sample(0.0);
    let observer_err = |t_s: f64| move |source| SimError::Observer { t_s, source };
    let mut fused = Track::new(x0, p0, &s.noise, dt).map_err(observer_err(0.0))?;
    let mut vision_only = Track::new(x0, p0, &s.noise, dt).map_err(observer_err(0.0))?;
    let mut haptic_only = Track::new(x0, p0, &s.noise, dt).map_err(observer_err(0.0))?;
    let eye = pipe.camera.center();

    let mut out = Vec::with_capacity(s.frame_count());
    for k in 0..s.frame_count() {
        let t = frame_time(s, k);
        let truth = s.trajectory.sample(t);
        let full = pipe.renderer.render(&truth);
        let observed = observed_mask(s, &pipe.camera, &truth, &full, k as u64);
        let occlusion = occlusion_fraction(&full, &observed).unwrap_or(1.0);

        let vision = pipe.vision(&observed, &fused.output);
        let readings: Vec<_> = pipe
            .sensors
            .iter()
            .enumerate()
            .map(|(i, pose)| (*pose, sensor_model.measure(pose, &s.target, &truth, mix_seed(s.seed, k as u64, STREAM_SENSOR + i as u64))))
            .collect();
        let n_valid = readings.iter().filter(|(_, m)| m.valid).count();
        let haptic = pipe.haptic(&readings, &fused.output);
        let vision_reading = pipe.vision_reading(&vision);
        let haptic_reading = pipe.haptic_reading(&haptic);

        let invalid = ModalityReading::invalid(s.noise.sentinel);
        let err = observer_err(t);
        fused
            .advance(
                &MeasurementPair {
                    vision: vision_reading,
                    haptic: haptic_reading,
                },
                n_sub,
                dt,
                &s.noise,
                &q,
            )
            .map_err(err)?;
        vision_only
            .advance(
                &MeasurementPair {
                    vision: vision_reading,
                    haptic: invalid,
                },
                n_sub,
                dt,
                &s.noise,
                &q,
            )
            .map_err(err)?;
        haptic_only
            .advance(
                &MeasurementPair {
                    vision: invalid,
                    haptic: haptic_reading,
                },
                n_sub,
                dt,
                &s.noise,
                &q,
            )
            .map_err(err)?;

        let errs = |p: &Pose6| pose_errors(p, &truth, pipe.symmetric);
        let (err_fused_m, err_fused_rad) = errs(&fused.output);
        let (err_vision_only_m, err_vision_only_rad) = errs(&vision_only.output);
        let (err_haptic_only_m, err_haptic_only_rad) = errs(&haptic_only.output);
        out.push(FrameRecord {
            frame: k,
            t_s: t,
            haptic_range: s.haptic_range,
            camera_distance_m: (truth.position - eye).norm(),
            truth,
            occlusion_fraction: occlusion,
            vision: vision.as_ref().map(|v| v.pose),
            vision_score: vision.as_ref().map(|v| v.score),
            r_v_scalar: vision.as_ref().map(|v| v.r_v_scalar),
            haptic,
            haptic_measurements: n_valid,
            fused: fused.output,
            vision_only: vision_only.output,
            haptic_only: haptic_only.output,
            err_vision_raw_m: vision.as_ref().map(|v| errs(&v.pose).0),
            err_haptic_raw_m: haptic.as_ref().map(|p| errs(p).0),
            err_fused_m,
            err_vision_only_m,
            err_haptic_only_m,
            err_fused_rad,
            err_vision_only_rad,
            err_haptic_only_rad,
        });
    }
    Ok(out)
}
