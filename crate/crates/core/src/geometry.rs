//! Kinematics of the 3-DoF overhead arm: a yaw joint carrying a planar
//! two-link pitch chain, embedded in the UAV body frame and mapped to the
//! world through the body pose.
//!
//! Every function here is total and pure. Angles are unwrapped reals; joint
//! limits belong to the dynamics layer.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Manipulator joint angles in radians: base yaw, shoulder pitch, elbow pitch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAngles {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
}

impl JointAngles {
    pub const fn new(q0: f64, q1: f64, q2: f64) -> Self {
        Self { q0, q1, q2 }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.q0, self.q1, self.q2)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.q0.is_finite() && self.q1.is_finite() && self.q2.is_finite()
    }
}

/// Link lengths of the planar chain, both strictly positive (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    l1: f64,
    l2: f64,
}

impl LinkGeometry {
    pub fn new(l1: f64, l2: f64) -> Result<Self, ConfigError> {
        if !(l1 > 0.0 && l1.is_finite()) {
            return Err(ConfigError::invalid("links.l1", "must be positive and finite"));
        }
        if !(l2 > 0.0 && l2.is_finite()) {
            return Err(ConfigError::invalid("links.l2", "must be positive and finite"));
        }
        Ok(Self { l1, l2 })
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    /// Maximum reach of the chain.
    pub fn reach(&self) -> f64 {
        self.l1 + self.l2
    }
}

impl Default for LinkGeometry {
    fn default() -> Self {
        Self { l1: 0.5, l2: 0.5 }
    }
}

/// Rigid pose: position in meters plus a rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        Self { position, rotation }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Matrix3::identity())
    }

    pub fn translation(position: Vector3<f64>) -> Self {
        Self::new(position, Matrix3::identity())
    }
}

/// Position of the tip of the planar chain in the arm plane, `(r_x, r_z)`.
pub fn planar_fk(q1: f64, q2: f64, links: &LinkGeometry) -> (f64, f64) {
    chain_planar(q1, q2, links.l1, links.l2)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// End-effector position in the body frame.
pub fn body_fk(q: &JointAngles, links: &LinkGeometry) -> Vector3<f64> {
    chain_point(q, links.l1, links.l2)
}

/// End-effector orientation in the body frame, `R_z(q0) R_y(q1 + q2)`.
pub fn body_orientation(q: &JointAngles) -> Matrix3<f64> {
    rot_z(q.q0) * rot_y(q.q1 + q.q2)
}

/// End-effector pose in the world given the UAV body pose.
pub fn world_pose(base: &Pose, q: &JointAngles, links: &LinkGeometry) -> Pose {
    Pose { position: base.position + base.rotation * body_fk(q, links), rotation: base.rotation * body_orientation(q) }
}

/// Product of the three link-frame homogeneous transforms. Each pitch step
/// rotates the frame so that positive angles raise the link toward +z and
/// then translates along the rotated link axis, which keeps the translation
/// column equal to [`body_fk`]. The rotation block is therefore
/// `R_z(q0) R_y(q1 + q2)ᵀ`, the mirror image of [`body_orientation`] in pitch.
pub fn homogeneous_chain(q: &JointAngles, links: &LinkGeometry) -> Matrix4<f64> {
    let t01 = homogeneous(&rot_z(q.q0), &Vector3::zeros());
    t01 * pitch_step(q.q1, links.l1) * pitch_step(q.q2, links.l2)
}

fn pitch_step(angle: f64, length: f64) -> Matrix4<f64> {
    let r = rot_y(-angle);
    homogeneous(&r, &(r * Vector3::new(length, 0.0, 0.0)))
}

fn homogeneous(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Matrix4<f64> {
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    t
}

/// Analytic translational Jacobian of [`body_fk`]; column `i` is `∂p/∂q_i`.
pub fn body_jacobian(q: &JointAngles, links: &LinkGeometry) -> Matrix3<f64> {
    chain_jacobian(q, links.l1, links.l2)
}

pub fn world_jacobian(base_rotation: &Matrix3<f64>, body_jacobian: &Matrix3<f64>) -> Matrix3<f64> {
    base_rotation * body_jacobian
}

/// Body-frame angular velocity of the end effector.
pub fn angular_velocity(q: &JointAngles, qdot: &Vector3<f64>) -> Vector3<f64> {
    let yaw_axis = Vector3::z();
    let pitch_axis = rot_z(q.q0) * Vector3::y();
    yaw_axis * qdot[0] + pitch_axis * (qdot[1] + qdot[2])
}

// The helpers below accept arbitrary (possibly zero) segment lengths so the
// dynamics can reuse them for link centres of mass.

pub(crate) fn chain_planar(q1: f64, q2: f64, a: f64, b: f64) -> (f64, f64) {
    let q12 = q1 + q2;
    (a * q1.cos() + b * q12.cos(), a * q1.sin() + b * q12.sin())
}

pub(crate) fn chain_point(q: &JointAngles, a: f64, b: f64) -> Vector3<f64> {
    let (rx, rz) = chain_planar(q.q1, q.q2, a, b);
    let (s0, c0) = q.q0.sin_cos();
    Vector3::new(c0 * rx, s0 * rx, rz)
}

pub(crate) fn chain_jacobian(q: &JointAngles, a: f64, b: f64) -> Matrix3<f64> {
    let (s0, c0) = q.q0.sin_cos();
    let (s1, c1) = q.q1.sin_cos();
    let (s12, c12) = (q.q1 + q.q2).sin_cos();
    let rx = a * c1 + b * c12;
    let drx1 = -a * s1 - b * s12;
    let drx2 = -b * s12;
    Matrix3::new(
        -s0 * rx,
        c0 * drx1,
        c0 * drx2, //
        c0 * rx,
        s0 * drx1,
        s0 * drx2, //
        0.0,
        rx,
        b * c12,
    )
}
