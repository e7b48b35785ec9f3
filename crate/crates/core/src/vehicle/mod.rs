//! Quadrotor rigid-body model, geometric tracking controller, reference
//! trajectories and IMU simulation. World frame is z-up with gravity along -z;
//! body z is the thrust axis.

mod control;
mod dynamics;
mod imu;
mod params;
mod trajectory;

use std::io::Write;

use thiserror::Error;

use crate::geometry::StateVector;

pub use control::{desired_attitude, geometric_control, ControlOutput};
pub use dynamics::{dynamics_step, state_derivative, Command};
pub use imu::{ImuModel, ImuNoise, ImuSample};
pub use params::{Gains, VehicleParams};
pub use trajectory::{RefPoint, ReferenceTrajectory, TrajectorySpec};


#[derive(Debug, Error, Clone, PartialEq)]
pub enum VehicleError {
    #[error("time step {0} outside (0, 0.01]")]
    InvalidStep(f64),
    #[error("non-finite command")]
    NonFiniteCommand,
    #[error("thrust {0} N outside [0, max]")]
    ThrustOutOfRange(f64),
    #[error("state became non-finite")]
    NonFiniteState,
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
}

/// CSV writer for ground-truth states.
pub struct TruthLogWriter<W: Write> {
    out: W,
}

impl<W: Write> TruthLogWriter<W> {
    pub const HEADER: &'static str = "t,x,y,z,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz";

    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{}", Self::HEADER)?;
        Ok(Self { out })
    }

    pub fn write(&mut self, s: &StateVector) -> std::io::Result<()> {
        let p = s.pose.position;
        let [qw, qx, qy, qz] = s.pose.rotation.wxyz();
        let v = s.linear_velocity;
        let w = s.angular_velocity;
        writeln!(
            self.out,
            "{:.6},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.timestamp, p.x, p.y, p.z, qw, qx, qy, qz, v.x, v.y, v.z, w.x, w.y, w.z
        )
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
