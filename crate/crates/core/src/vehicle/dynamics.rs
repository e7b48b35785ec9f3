use nalgebra::{Matrix3, Vector3};

use super::{VehicleError, VehicleParams};
use crate::geometry::{exp_map, hat, Pose, StateVector};

/// Collective thrust along body z and body moment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Command {
    /// Newtons.
    pub thrust: f64,
    /// Newton metres, body frame.
    pub moment: Vector3<f64>,
}

impl Command {
    pub fn hover(params: &VehicleParams) -> Self {
        Self {
            thrust: params.mass * params.gravity,
            moment: Vector3::zeros(),
        }
    }
}

/// Inverse of the right Jacobian of SO(3): maps body rate to the rate of a
/// rotation-vector increment `theta` with `R = R0 exp(theta)`.
pub(crate) fn right_jacobian_inv(theta: &Vector3<f64>) -> Matrix3<f64> {
    let t = theta.norm();
    let h = hat(theta);
    let c = if t < 1e-4 {
        1.0 / 12.0 + t * t / 720.0
    } else {
        1.0 / (t * t) - (1.0 + t.cos()) / (2.0 * t * t.sin())
    };
    Matrix3::identity() + h * 0.5 + h * h * c
}

/// World-frame linear acceleration and body angular acceleration.
pub fn state_derivative(
    state: &StateVector,
    cmd: &Command,
    params: &VehicleParams,
) -> (Vector3<f64>, Vector3<f64>) {
    accelerations(&state.pose.rotation.matrix(), &state.angular_velocity, cmd, params)
}

fn accelerations(
    r: &Matrix3<f64>,
    omega: &Vector3<f64>,
    cmd: &Command,
    params: &VehicleParams,
) -> (Vector3<f64>, Vector3<f64>) {
    let lin = r.column(2) * (cmd.thrust / params.mass) - Vector3::z() * params.gravity;
    let j = &params.inertia;
    let ang = params.inertia_inv() * (cmd.moment - omega.cross(&(j * omega)));
    (lin, ang)
}

/// One RK4 step. Attitude is integrated as a rotation-vector increment on the
/// group (Munthe-Kaas form), so the result is exactly a rotation.
pub fn dynamics_step(
    state: &StateVector,
    cmd: &Command,
    params: &VehicleParams,
    dt: f64,
) -> Result<StateVector, VehicleError> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(VehicleError::InvalidStep(dt));
    }
    if !(cmd.thrust.is_finite() && cmd.moment.iter().all(|m| m.is_finite())) {
        return Err(VehicleError::NonFiniteCommand);
    }
    if cmd.thrust < 0.0 || cmd.thrust > params.max_thrust * (1.0 + 1e-12) {
        return Err(VehicleError::ThrustOutOfRange(cmd.thrust));
    }
    let r0 = state.pose.rotation;
    let x0 = state.pose.position;
    let v0 = state.linear_velocity;
    let w0 = state.angular_velocity;

    // derivative of (x, v, theta, omega) at an intermediate stage
    let eval = |v: &Vector3<f64>, theta: &Vector3<f64>, w: &Vector3<f64>| {
        let r = (r0 * exp_map(theta)).matrix();
        let (a, alpha) = accelerations(&r, w, cmd, params);
        (*v, a, right_jacobian_inv(theta) * w, alpha)
    };

    let z = Vector3::zeros();
    let k1 = eval(&v0, &z, &w0);
    let k2 = eval(&(v0 + k1.1 * (dt / 2.0)), &(k1.2 * (dt / 2.0)), &(w0 + k1.3 * (dt / 2.0)));
    let k3 = eval(&(v0 + k2.1 * (dt / 2.0)), &(k2.2 * (dt / 2.0)), &(w0 + k2.3 * (dt / 2.0)));
    let k4 = eval(&(v0 + k3.1 * dt), &(k3.2 * dt), &(w0 + k3.3 * dt));

    let comb = |a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, d: Vector3<f64>| (a + (b + c) * 2.0 + d) * (dt / 6.0);
    let x = x0 + comb(k1.0, k2.0, k3.0, k4.0);
    let v = v0 + comb(k1.1, k2.1, k3.1, k4.1);
    let theta = comb(k1.2, k2.2, k3.2, k4.2);
    let w = w0 + comb(k1.3, k2.3, k3.3, k4.3);

    let next = StateVector {
        pose: Pose::new(x, r0 * exp_map(&theta)),
        linear_velocity: v,
        angular_velocity: w,
        timestamp: state.timestamp + dt,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(VehicleError::NonFiniteState)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_rad, Rotation};

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    fn run(mut s: StateVector, cmd: &Command, dt: f64, steps: usize) -> StateVector {
        for _ in 0..steps {
            s = dynamics_step(&s, cmd, &params(), dt).unwrap();
        }
        s
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let p = params();
        let s0 = StateVector::at_rest(Pose::from_translation(Vector3::new(1.0, -2.0, 3.0)), 0.0);
        let s = run(s0, &Command::hover(&p), 0.001, 10_000);
        assert!((s.pose.position - s0.pose.position).norm() < 1e-9);
        assert!(s.linear_velocity.norm() < 1e-9);
        assert!(geodesic_rad(&s.pose.rotation, &s0.pose.rotation) < 1e-12);
    }

    #[test]
    fn free_fall() {
        let s = run(StateVector::default(), &Command::default(), 0.001, 1000);
        assert!((s.linear_velocity.z + 9.81).abs() < 1e-9);
        assert!((s.pose.position.z + 0.5 * 9.81).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = params();
        let s = StateVector::default();
        assert!(matches!(dynamics_step(&s, &Command::hover(&p), &p, 0.0), Err(VehicleError::InvalidStep(_))));
        assert!(matches!(dynamics_step(&s, &Command::hover(&p), &p, 0.02), Err(VehicleError::InvalidStep(_))));
        let nan = Command {
            thrust: f64::NAN,
            moment: Vector3::zeros(),
        };
        assert!(matches!(dynamics_step(&s, &nan, &p, 0.001), Err(VehicleError::NonFiniteCommand)));
        let big = Command {
            thrust: p.max_thrust * 2.0,
            moment: Vector3::zeros(),
        };
        assert!(dynamics_step(&s, &big, &p, 0.001).is_err());
    }

    #[test]
    fn torque_free_spin_conserves_momentum() {
        let p = params();
        let mut s = StateVector::default();
        // principal axis plus a small wobble
        s.angular_velocity = Vector3::new(0.01, 0.02, 3.0);
        let h0 = (s.pose.rotation.matrix() * (p.inertia * s.angular_velocity)).norm();
        let cmd = Command::default();
        let s = run(s, &cmd, 0.001, 10_000);
        let h1 = (s.pose.rotation.matrix() * (p.inertia * s.angular_velocity)).norm();
        assert!((h1 - h0).abs() < 1e-6 * h0.max(1.0), "{h0} {h1}");
    }

    #[test]
    fn stays_on_so3() {
        let p = params();
        let mut s = StateVector::default();
        s.angular_velocity = Vector3::new(1.3, -0.7, 2.1);
        let cmd = Command {
            thrust: p.mass * p.gravity,
            moment: Vector3::new(0.001, -0.002, 0.0005),
        };
        for _ in 0..1_000_000 {
            s = dynamics_step(&s, &cmd, &p, 0.001).unwrap();
            s.pose.position = Vector3::zeros();
            s.linear_velocity = Vector3::zeros();
        }
        let r = s.pose.rotation.matrix();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        assert!(err < 1e-9, "{err}");
    }

    /// Open-loop tumbling flight; errors against a dt/100 reference.
    pub(crate) fn convergence_ratio() -> f64 {
        let p = params();
        let mut s0 = StateVector::at_rest(
            Pose::new(Vector3::new(0.0, 0.0, 2.0), Rotation::from_ypr(0.2, 0.1, -0.15)),
            0.0,
        );
        s0.linear_velocity = Vector3::new(0.5, -0.2, 0.1);
        s0.angular_velocity = Vector3::new(0.8, -0.5, 0.6);
        let cmd = Command {
            thrust: p.mass * p.gravity * 1.05,
            moment: Vector3::new(0.004, -0.003, 0.002),
        };
        let horizon = 2.0;
        let dt = 0.01;
        let err = |h: f64| {
            let n = (horizon / h).round() as usize;
            let s = run(s0, &cmd, h, n);
            let reference = run(s0, &cmd, dt / 100.0, (horizon / (dt / 100.0)).round() as usize);
            (s.pose.position - reference.pose.position).norm()
                + geodesic_rad(&s.pose.rotation, &reference.pose.rotation)
        };
        err(dt) / err(dt / 2.0)
    }

    #[test]
    fn rk4_convergence_order() {
        let ratio = convergence_ratio();
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn jacobian_inverse_small_angle() {
        let t = Vector3::new(1e-6, -2e-6, 3e-6);
        let j = right_jacobian_inv(&t);
        let series = Matrix3::identity() + hat(&t) * 0.5;
        assert!((j - series).abs().max() < 1e-11);
    }
}
