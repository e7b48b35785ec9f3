//! Error-state Kalman filter over IMU and delayed pose fixes, with
//! chi-square consistency statistics.

mod consistency;
mod delayed;
mod eskf;

use std::io::Write;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::vehicle::ImuNoise;

pub use consistency::{chi_square_mean_bounds, consistency_stats, nees, ConsistencySummary};
pub use delayed::{DelayedEskf, EstimatorStats};
pub use eskf::{predict, process_noise, update_pose, Cov15, FilterState, ATT, BA, BG, POS, VEL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("time step {0} outside (0, 0.02]")]
    InvalidStep(f64),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(String),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// A pose fix stamped with when the image was taken and when it arrived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseMeasurement {
    pub pose: Pose,
    pub position_cov: Matrix3<f64>,
    /// Radians, per axis.
    pub rotation_sigma: f64,
    pub capture_timestamp: f64,
    pub arrival_timestamp: f64,
}

impl PoseMeasurement {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidMeasurement(m.into()));
        if !self.pose.is_finite() || !self.position_cov.iter().all(|v| v.is_finite()) {
            return bad("non-finite field");
        }
        if !(self.capture_timestamp.is_finite() && self.arrival_timestamp.is_finite()) {
            return bad("non-finite timestamp");
        }
        if self.capture_timestamp > self.arrival_timestamp + 1e-9 {
            return bad("captured after arrival");
        }
        if !(self.rotation_sigma > 0.0) {
            return bad("rotation sigma must be positive");
        }
        let c = &self.position_cov;
        if (c - c.transpose()).abs().max() > 1e-9 * c.abs().max() || c.cholesky().is_none() {
            return bad("position covariance must be SPD");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Seconds of IMU history kept for rewinding.
    pub buffer_window: f64,
    /// Multiplies the reported measurement sigmas.
    pub inflation: f64,
    /// Seconds without a fix before the estimate is flagged degraded.
    pub outage_limit: f64,
    pub gravity: f64,
    pub process_noise: ImuNoise,
    /// Initial one-sigma uncertainties.
    pub init_position_sigma: f64,
    pub init_velocity_sigma: f64,
    pub init_attitude_sigma: f64,
    pub init_gyro_bias_sigma: f64,
    pub init_accel_bias_sigma: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            buffer_window: 0.5,
            inflation: 1.5,
            outage_limit: 3.0,
            gravity: 9.81,
            process_noise: ImuNoise::default(),
            init_position_sigma: 0.2,
            init_velocity_sigma: 0.1,
            init_attitude_sigma: 0.05,
            init_gyro_bias_sigma: 0.02,
            init_accel_bias_sigma: 0.05,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidConfig(m.into()));
        if !(self.buffer_window > 0.0) {
            return bad("buffer window must be positive");
        }
        if !(self.inflation > 0.0) {
            return bad("inflation must be positive");
        }
        if !(self.outage_limit > 0.0) {
            return bad("outage limit must be positive");
        }
        let sig = [
            self.init_position_sigma,
            self.init_velocity_sigma,
            self.init_attitude_sigma,
            self.init_gyro_bias_sigma,
            self.init_accel_bias_sigma,
        ];
        if !sig.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return bad("initial sigmas must be positive");
        }
        Ok(())
    }

    pub fn initial_cov(&self) -> Cov15 {
        let mut p = Cov15::zeros();
        let blocks = [
            (POS, self.init_position_sigma),
            (VEL, self.init_velocity_sigma),
            (ATT, self.init_attitude_sigma),
            (BG, self.init_gyro_bias_sigma),
            (BA, self.init_accel_bias_sigma),
        ];
        for (at, s) in blocks {
            for i in 0..3 {
                p[(at + i, at + i)] = s * s;
            }
        }
        p
    }
}

/// CSV writer for filter output.
pub struct EstimateLogWriter<W: Write> {
    out: W,
}

impl<W: Write> EstimateLogWriter<W> {
    pub const HEADER: &'static str = "t,x̂,ŷ,ẑ,q̂w,q̂x,q̂y,q̂z,v̂x,v̂y,v̂z,σx,σy,σz";

    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{}", Self::HEADER)?;
        Ok(Self { out })
    }

    pub fn write(&mut self, fs: &FilterState) -> std::io::Result<()> {
        let p = fs.position;
        let [qw, qx, qy, qz] = fs.rotation.wxyz();
        let v = fs.velocity;
        let s = fs.position_sigma();
        writeln!(
            self.out,
            "{:.6},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fs.timestamp, p.x, p.y, p.z, qw, qx, qy, qz, v.x, v.y, v.z, s.x, s.y, s.z
        )
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
