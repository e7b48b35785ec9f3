use nalgebra::{Matrix3, Vector3};

use super::{Command, RefPoint, VehicleParams};
use crate::geometry::{vee_skew_part, Rotation, StateVector};

/// Controller output plus the tracking errors that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub command: Command,
    /// True when the requested thrust fell outside [0, max_thrust].
    pub clamped: bool,
    pub e_x: Vector3<f64>,
    pub e_v: Vector3<f64>,
    pub e_r: Vector3<f64>,
    pub e_omega: Vector3<f64>,
    pub desired_rotation: Rotation,
}

/// Desired attitude from a thrust direction and heading.
pub fn desired_attitude(b3: &Vector3<f64>, yaw: f64) -> Matrix3<f64> {
    let b3 = b3.try_normalize(1e-12).unwrap_or_else(Vector3::z);
    let b1c = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let b2 = b3
        .cross(&b1c)
        .try_normalize(1e-9)
        // heading along the thrust axis; fall back to a perpendicular of b3
        .unwrap_or_else(|| b3.cross(&Vector3::new(-yaw.sin(), yaw.cos(), 0.0)).cross(&b3).normalize());
    let b1 = b2.cross(&b3);
    Matrix3::from_columns(&[b1, b2, b3])
}

/// Geometric tracking law on SE(3), non-adaptive form.
pub fn geometric_control(state: &StateVector, reference: &RefPoint, params: &VehicleParams) -> ControlOutput {
    let g = &params.gains;
    let r = state.pose.rotation.matrix();
    let e_x = state.pose.position - reference.position;
    let e_v = state.linear_velocity - reference.velocity;
    let f_des = -e_x * g.kx - e_v * g.kv
        + (Vector3::z() * params.gravity + reference.acceleration) * params.mass;
    let rd = desired_attitude(&f_des, reference.yaw);
    let e_r = vee_skew_part(&(rd.transpose() * r - r.transpose() * rd)) * 0.5;
    let omega_d = rd.transpose() * Vector3::z() * reference.yaw_rate;
    let w = state.angular_velocity;
    let e_omega = w - r.transpose() * rd * omega_d;

    let f = f_des.dot(&r.column(2));
    let thrust = f.clamp(0.0, params.max_thrust);
    let moment = -e_r * g.kr - e_omega * g.komega + w.cross(&(params.inertia * w));
    ControlOutput {
        command: Command { thrust, moment },
        clamped: thrust != f,
        e_x,
        e_v,
        e_r,
        e_omega,
        desired_rotation: Rotation::from_matrix(&rd),
    }
}
