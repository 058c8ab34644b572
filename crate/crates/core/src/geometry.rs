//! Poses, RPY rotations, rigid transforms and the pinhole camera.
//!
//! Attitudes are roll-pitch-yaw triples applied as intrinsic rotations about
//! the body x, y and z axes in that order, so the rotation matrix is
//! `Rx(roll) * Ry(pitch) * Rz(yaw)`. A consequence worth knowing: changing the
//! yaw component always rotates the body about its own z axis, which is why
//! axially symmetric shapes put their symmetry axis on body z.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Tolerance on `cos(pitch)` below which the attitude is treated as gimbal locked.
const GIMBAL_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already, and pi stays pi.
    w
}

/// 6-DoF object pose: position in meters and RPY attitude in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub position: Vector3<f64>,
    pub attitude: Vector3<f64>,
}

impl Default for Pose6 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6 {
    /// Builds a pose, wrapping each attitude component into `(-pi, pi]`.
    pub fn new(position: Vector3<f64>, attitude: Vector3<f64>) -> Self {
        Self {
            position,
            attitude: attitude.map(wrap_angle),
        }
    }

    pub fn try_new(position: Vector3<f64>, attitude: Vector3<f64>) -> Result<Self, GeometryError> {
        if position.iter().chain(attitude.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        Ok(Self::new(position, attitude))
    }

    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            attitude: Vector3::zeros(),
        }
    }

    pub fn from_xyz_rpy(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(Vector3::new(x, y, z), Vector3::new(roll, pitch, yaw))
    }

    /// `[x, y, z, roll, pitch, yaw]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.attitude.x,
            self.attitude.y,
            self.attitude.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    /// Adds a 6-vector increment and re-wraps the attitude.
    pub fn offset(&self, delta: &Vector6<f64>) -> Self {
        Self::from_vector(&(self.to_vector() + delta))
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.attitude.iter()).all(|v| v.is_finite())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rpy_to_matrix(&self.attitude)
    }

    /// Body-to-world transform of this pose.
    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::from_pose(self)
    }
}

/// Componentwise `a - b` with attitude differences wrapped into `(-pi, pi]`.
pub fn pose_error(a: &Pose6, b: &Pose6) -> Vector6<f64> {
    let dp = a.position - b.position;
    let da = (a.attitude - b.attitude).map(wrap_angle);
    Vector6::new(dp.x, dp.y, dp.z, da.x, da.y, da.z)
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation for an RPY attitude: roll about body x, then pitch about the new
/// body y, then yaw about the new body z.
pub fn rpy_to_matrix(attitude: &Vector3<f64>) -> Matrix3<f64> {
    rot_x(attitude.x) * rot_y(attitude.y) * rot_z(attitude.z)
}

/// Inverse of [`rpy_to_matrix`]. At gimbal lock (`|pitch| = pi/2`) roll is set
/// to zero and the remaining rotation is folded into yaw.
pub fn matrix_to_rpy(r: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let cos_pitch = r[(0, 0)].hypot(r[(0, 1)]);
    if cos_pitch < GIMBAL_EPS {
        let yaw = r[(1, 0)].atan2(r[(1, 1)]);
        return Vector3::new(0.0, pitch, wrap_angle(yaw));
    }
    let roll = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let yaw = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Vector3::new(wrap_angle(roll), pitch, wrap_angle(yaw))
}

/// Rotation about a unit axis (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = k.cross_matrix();
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Proper rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_pose(pose: &Pose6) -> Self {
        Self::new(rpy_to_matrix(&pose.attitude), pose.position)
    }

    pub fn to_pose(&self) -> Pose6 {
        Pose6::new(self.translation, matrix_to_rpy(&self.rotation))
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -(rt * self.translation))
    }

    /// Checks `R^T R = I` and `det R = 1` within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let orth = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        orth <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel(Vector2<f64>),
    BehindCamera,
}

/// Pinhole camera. Camera frame: x right, y down, z forward along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World to camera.
    pub extrinsic: RigidTransform,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        extrinsic: RigidTransform,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidCamera("empty image".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidCamera(
                "principal point outside the image".into(),
            ));
        }
        if !self.extrinsic.is_proper(1e-9) {
            return Err(GeometryError::InvalidCamera("extrinsic is not a rotation".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with world `up` mapped to image up.
    pub fn look_at(
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera("up is parallel to the view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        // Rows are the camera axes expressed in world coordinates.
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let extrinsic = RigidTransform::new(r, -(r * eye));
        Self::new(
            fx,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            extrinsic,
        )
    }

    /// Same view at `factor` times the resolution.
    pub fn scaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
            extrinsic: self.extrinsic,
        }
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsic.apply(p_world)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.extrinsic.inverse().translation
    }

    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Projection {
        if pc.z <= 0.0 {
            return Projection::BehindCamera;
        }
        Projection::Pixel(Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    pub fn project_point(&self, p_world: &Vector3<f64>) -> Projection {
        self.project_camera_point(&self.to_camera(p_world))
    }
}
