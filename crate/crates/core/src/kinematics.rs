//! Serial 6-joint robot arm carrying the proximity sensors.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{axis_angle, RigidTransform};

pub const JOINT_COUNT: usize = 6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KinematicsError {
    #[error("a chain needs exactly {JOINT_COUNT} joints, got {0}")]
    JointCount(usize),
    #[error("sensor mount {mount} references link {link}, but the chain has {links} links")]
    BadMount {
        mount: usize,
        link: usize,
        links: usize,
    },
    #[error("joint {0} has a zero or non-finite axis")]
    BadAxis(usize),
}

/// Revolute joint: the link frame is `offset * rot(axis, theta)` relative to its parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub axis: Vector3<f64>,
    pub offset: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorMount {
    pub link: usize,
    pub transform: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    #[serde(default)]
    pub base: RigidTransform,
    pub joints: Vec<Joint>,
    pub mounts: Vec<SensorMount>,
}

impl KinematicChain {
    pub fn new(base: RigidTransform, joints: Vec<Joint>, mounts: Vec<SensorMount>) -> Result<Self, KinematicsError> {
        let chain = Self { base, joints, mounts };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.joints.len() != JOINT_COUNT {
            return Err(KinematicsError::JointCount(self.joints.len()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            let n = j.axis.norm();
            if !(n.is_finite() && n > 0.0) {
                return Err(KinematicsError::BadAxis(i));
            }
        }
        for (i, m) in self.mounts.iter().enumerate() {
            if m.link >= self.joints.len() {
                return Err(KinematicsError::BadMount {
                    mount: i,
                    link: m.link,
                    links: self.joints.len(),
                });
            }
        }
        Ok(())
    }

    /// World frame of every link.
    pub fn link_frames(&self, theta: &[f64; JOINT_COUNT]) -> Vec<RigidTransform> {
        let mut frames = Vec::with_capacity(self.joints.len());
        let mut current = self.base;
        for (joint, &angle) in self.joints.iter().zip(theta) {
            let rot = RigidTransform::new(axis_angle(&joint.axis, angle), Vector3::zeros());
            current = current.compose(&joint.offset).compose(&rot);
            frames.push(current);
        }
        frames
    }

    /// World pose of each mounted sensor, in mount order.
    pub fn forward_kinematics(&self, theta: &[f64; JOINT_COUNT]) -> Vec<RigidTransform> {
        let frames = self.link_frames(theta);
        self.mounts
            .iter()
            .map(|m| frames[m.link].compose(&m.transform))
            .collect()
    }
}
