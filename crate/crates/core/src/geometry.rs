//! Frames, rigid transforms and wrench mapping between the F/T sensor frame
//! `{S}` and the world frame `{W}`.
//!
//! Rotations are unit quaternions stored scalar-first `(w, x, y, z)`. A
//! [`RigidTransform`] always maps sensor coordinates into world coordinates.

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type UnitQuaternion = nalgebra::UnitQuaternion<f64>;

/// Vectors shorter than this are treated as zero by [`angle_between`].
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Builds a unit quaternion from scalar-first components, normalizing.
pub fn quaternion_wxyz(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion {
    UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
}

/// Scalar-first components of a unit quaternion.
pub fn wxyz(q: &UnitQuaternion) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Pose of `{S}` in `{W}`: `p_W = R p_S + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: UnitQuaternion) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = self.rotation.inverse();
        RigidTransform {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        transform_point(self, p)
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }
}

/// `R p + t`.
pub fn transform_point(transform: &RigidTransform, p: &Vec3) -> Vec3 {
    transform.rotation * p + transform.translation
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Sensor,
    World,
}

/// Force (N) and torque about the frame origin (N·m), tagged with the frame
/// both are expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
    pub frame: Frame,
}

impl Wrench {
    pub fn sensor(force: Vec3, torque: Vec3) -> Self {
        Self {
            force,
            torque,
            frame: Frame::Sensor,
        }
    }

    pub fn world(force: Vec3, torque: Vec3) -> Self {
        Self {
            force,
            torque,
            frame: Frame::World,
        }
    }

    pub fn expect_frame(&self, expected: Frame) -> Result<()> {
        if self.frame == expected {
            Ok(())
        } else {
            Err(Error::FrameMismatch {
                expected,
                found: self.frame,
            })
        }
    }
}

/// Maps a sensor-frame wrench into the world frame.
///
/// `f_W = R f_S`, `τ_W = R τ_S + t × (R f_S)`.
pub fn adjoint_wrench_to_world(transform: &RigidTransform, wrench: &Wrench) -> Result<Wrench> {
    wrench.expect_frame(Frame::Sensor)?;
    let force = transform.rotation * wrench.force;
    let torque = transform.rotation * wrench.torque + transform.translation.cross(&force);
    Ok(Wrench::world(force, torque))
}

/// Inverse of [`adjoint_wrench_to_world`].
pub fn adjoint_wrench_to_sensor(transform: &RigidTransform, wrench: &Wrench) -> Result<Wrench> {
    wrench.expect_frame(Frame::World)?;
    let inv = transform.rotation.inverse();
    let force = inv * wrench.force;
    let torque = inv * (wrench.torque - transform.translation.cross(&wrench.force));
    Ok(Wrench::sensor(force, torque))
}

/// Angle between two vectors in degrees, in `[0, 180]`.
///
/// Uses `atan2(|r1 × r2|, r1 · r2)` so obtuse angles do not wrap.
pub fn angle_between(r1: &Vec3, r2: &Vec3) -> Result<f64> {
    if r1.norm() < DEGENERATE_NORM || r2.norm() < DEGENERATE_NORM {
        return Err(Error::Degenerate("angle_between needs non-zero vectors"));
    }
    Ok(r1.cross(r2).norm().atan2(r1.dot(r2)).to_degrees())
}
