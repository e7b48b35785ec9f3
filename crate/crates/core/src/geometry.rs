//! Rigid-body math shared by every stage of the loop.
//!
//! Rotations are stored as unit quaternions with the sign canonicalized to
//! `w >= 0`; matrices are produced on demand. Angles are radians everywhere
//! except [`geodesic_deg`] and [`Rotation::ypr_deg`], which exist for metrics
//! and reports.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not skew-symmetric (max |m + m^T| = {0:e})")]
    NotSkewSymmetric(f64),
    #[error("rotation angle {0} rad is within 1e-6 of pi; log map is ill-conditioned")]
    NearCutLocus(f64),
    #[error("zero-norm quaternion")]
    ZeroQuaternion,
    #[error("buffer holds {0} bytes, pose needs {POSE_WIRE_LEN}")]
    ShortBuffer(usize),
    #[error("non-finite value in pose")]
    NonFinite,
}

/// Angles at or beyond this are treated as the cut locus of the log map.
pub const CUT_LOCUS_MARGIN: f64 = 1e-6;

/// Skew-symmetric matrix with `hat(v) * w == v.cross(w)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Rejects inputs whose symmetric part exceeds 1e-6.
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let asym = (m + m.transpose()).abs().max();
    if !(asym < 1e-6) {
        return Err(GeometryError::NotSkewSymmetric(asym));
    }
    Ok(Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    ))
}

/// Unchecked vee of the skew part of `m`; used where the caller builds the
/// skew matrix itself (controller attitude error).
pub(crate) fn vee_skew_part(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// A member of SO(3).
#[derive(Debug, Clone, Copy)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

impl PartialEq for Rotation {
    fn eq(&self, other: &Self) -> bool {
        self.q.coords == other.q.coords || self.q.coords == -other.q.coords
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
        }
    }

    fn canonical(q: UnitQuaternion<f64>) -> Self {
        let q = if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        };
        Self { q }
    }

    /// Builds from (w, x, y, z), normalizing. Input that is already unit to
    /// a few ulps is kept bit-for-bit so logged rotations read back exactly.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let raw = Quaternion::new(w, x, y, z);
        let n = raw.norm();
        if !n.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if n < 1e-12 {
            return Err(GeometryError::ZeroQuaternion);
        }
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self::canonical(UnitQuaternion::new_unchecked(raw)));
        }
        Ok(Self::canonical(UnitQuaternion::new_normalize(raw)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self::canonical(UnitQuaternion::new_normalize(q.into_inner()))
    }

    /// Projects an approximately orthonormal matrix onto SO(3).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_eps(m, 1e-12, 100, nalgebra::Rotation3::identity());
        Self::canonical(UnitQuaternion::from_rotation_matrix(&rot))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-15 {
            return Self::identity();
        }
        exp_map(&(axis * (angle / n)))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    /// Yaw-pitch-roll, Z-Y-X intrinsic: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_ypr(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::rot_z(yaw) * Self::rot_y(pitch) * Self::rot_x(roll)
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    /// (w, x, y, z) with `w >= 0`.
    pub fn wxyz(&self) -> [f64; 4] {
        [self.q.w, self.q.i, self.q.j, self.q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    /// Unit axis and angle in `[0, pi]`; the axis is +z for the identity.
    pub fn axis_angle(&self) -> (Vector3<f64>, f64) {
        let v = Vector3::new(self.q.i, self.q.j, self.q.k);
        let s = v.norm();
        let angle = 2.0 * s.atan2(self.q.w);
        if s < 1e-15 {
            (Vector3::z(), 0.0)
        } else {
            (v / s, angle)
        }
    }

    pub fn angle(&self) -> f64 {
        self.axis_angle().1
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(self.q.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q.transform_vector(v)
    }

    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q.inverse_transform_vector(v)
    }

    /// Z-Y-X intrinsic (yaw, pitch, roll) in degrees. Plotting only.
    pub fn ypr_deg(&self) -> [f64; 3] {
        let (roll, pitch, yaw) = self.q.euler_angles();
        [yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees()]
    }

    pub fn is_finite(&self) -> bool {
        self.q.coords.iter().all(|c| c.is_finite())
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        // Renormalize after every product so long compositions stay on SO(3).
        Rotation::from_unit_quaternion(self.q * rhs.q)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;

    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.rotate(&rhs)
    }
}

/// Rodrigues exponential of a rotation vector.
pub fn exp_map(omega: &Vector3<f64>) -> Rotation {
    let theta = omega.norm();
    let half = 0.5 * theta;
    // sin(theta/2)/theta, series below 1e-4 rad.
    let k = if theta < 1e-4 {
        0.5 - theta * theta / 48.0
    } else {
        half.sin() / theta
    };
    let q = Quaternion::new(half.cos(), k * omega.x, k * omega.y, k * omega.z);
    Rotation::canonical(UnitQuaternion::new_normalize(q))
}

/// Rotation vector of `r`, defined for angles below `pi - 1e-6`.
pub fn log_map(r: &Rotation) -> Result<Vector3<f64>, GeometryError> {
    let q = r.unit_quaternion();
    let v = Vector3::new(q.i, q.j, q.k);
    let s = v.norm();
    let angle = 2.0 * s.atan2(q.w);
    if angle >= PI - CUT_LOCUS_MARGIN {
        return Err(GeometryError::NearCutLocus(angle));
    }
    if s < 1e-12 {
        // angle ~ 2s, so v * angle / s ~ 2 v
        return Ok(v * 2.0 / q.w);
    }
    Ok(v * (angle / s))
}

/// Log map without the cut-locus check; at exactly pi an arbitrary but
/// deterministic axis is returned. Used by filters where the residual is
/// always small but must not fail.
pub(crate) fn log_map_unchecked(r: &Rotation) -> Vector3<f64> {
    let q = r.unit_quaternion();
    let v = Vector3::new(q.i, q.j, q.k);
    let s = v.norm();
    if s < 1e-12 {
        return v * 2.0 / q.w;
    }
    let angle = 2.0 * s.atan2(q.w);
    v * (angle / s)
}

/// Angle of `r1^T r2` in degrees, in `[0, 180]`.
pub fn geodesic_deg(r1: &Rotation, r2: &Rotation) -> f64 {
    geodesic_rad(r1, r2).to_degrees()
}

pub fn geodesic_rad(r1: &Rotation, r2: &Rotation) -> f64 {
    let d = r1.q.inverse() * r2.q;
    let s = Vector3::new(d.i, d.j, d.k).norm();
    2.0 * s.atan2(d.w.abs())
}

/// Byte length of a pose on the wire: 3 + 4 little-endian f64.
pub const POSE_WIRE_LEN: usize = 56;

/// Rigid transform taking body coordinates to world coordinates:
/// `p_world = rotation * p_body + position`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Rotation,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Rotation) -> Self {
        Self { position, rotation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(position: Vector3<f64>) -> Self {
        Self::new(position, Rotation::identity())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.position
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_rotate(&(p - self.position))
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite()) && self.rotation.is_finite()
    }

    /// Position (x, y, z) then quaternion (w, x, y, z), little-endian f64.
    pub fn to_le_bytes(&self) -> [u8; POSE_WIRE_LEN] {
        let mut out = [0u8; POSE_WIRE_LEN];
        let q = self.rotation.wxyz();
        let vals = [
            self.position.x,
            self.position.y,
            self.position.z,
            q[0],
            q[1],
            q[2],
            q[3],
        ];
        for (chunk, v) in out.chunks_exact_mut(8).zip(vals) {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Pose, GeometryError> {
        if bytes.len() < POSE_WIRE_LEN {
            return Err(GeometryError::ShortBuffer(bytes.len()));
        }
        let mut vals = [0.0f64; 7];
        for (v, chunk) in vals.iter_mut().zip(bytes[..POSE_WIRE_LEN].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let rotation = Rotation::from_wxyz(vals[3], vals[4], vals[5], vals[6])?;
        Ok(Pose::new(Vector3::new(vals[0], vals[1], vals[2]), rotation))
    }
}

/// `a * b`: apply `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        position: a.rotation.rotate(&b.position) + a.position,
        rotation: a.rotation * b.rotation,
    }
}

pub fn inverse(p: &Pose) -> Pose {
    let rinv = p.rotation.inverse();
    Pose {
        position: -rinv.rotate(&p.position),
        rotation: rinv,
    }
}

/// Full rigid-body state `(x, R, v, Omega)` at a time stamp.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector {
    pub pose: Pose,
    /// World frame, m/s.
    pub linear_velocity: Vector3<f64>,
    /// Body frame, rad/s.
    pub angular_velocity: Vector3<f64>,
    /// Seconds on the simulation clock.
    pub timestamp: f64,
}

impl StateVector {
    pub fn at_rest(pose: Pose, timestamp: f64) -> Self {
        Self {
            pose,
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            timestamp,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.is_finite()
            && self.linear_velocity.iter().all(|c| c.is_finite())
            && self.angular_velocity.iter().all(|c| c.is_finite())
            && self.timestamp.is_finite()
    }
}
