use std::collections::VecDeque;

use nalgebra::Vector3;

use super::eskf::{predict, update_pose, FilterState};
use super::{EstimatorConfig, EstimatorError, PoseMeasurement};
use crate::geometry::StateVector;
use crate::vehicle::ImuSample;

/// Grid tolerance when matching capture times to buffered IMU epochs.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Entry {
    /// State at the start of the interval, before `meas` are applied.
    prior: FilterState,
    meas: Vec<PoseMeasurement>,
    imu: ImuSample,
    dt: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EstimatorStats {
    pub predictions: u64,
    pub updates: u64,
    pub dropped_stale: u64,
    pub rejected: u64,
    pub missed_fixes: u64,
}

/// ESKF that applies pose measurements at their capture time by rewinding to
/// the buffered state and replaying IMU samples.
#[derive(Debug, Clone)]
pub struct DelayedEskf {
    config: EstimatorConfig,
    entries: VecDeque<Entry>,
    head_prior: FilterState,
    head_meas: Vec<PoseMeasurement>,
    current: FilterState,
    last_gyro: Vector3<f64>,
    last_fix: f64,
    last_nis: Option<f64>,
    pub stats: EstimatorStats,
}

fn sort_key(a: &PoseMeasurement, b: &PoseMeasurement) -> std::cmp::Ordering {
    a.capture_timestamp
        .total_cmp(&b.capture_timestamp)
        .then(a.arrival_timestamp.total_cmp(&b.arrival_timestamp))
        // identical stamps: fall back to content so arrival order never matters
        .then_with(|| a.pose.to_le_bytes().cmp(&b.pose.to_le_bytes()))
}

impl DelayedEskf {
    pub fn new(initial: FilterState, config: EstimatorConfig) -> Result<Self, EstimatorError> {
        config.validate()?;
        Ok(Self {
            config,
            entries: VecDeque::new(),
            head_prior: initial,
            head_meas: Vec::new(),
            current: initial,
            last_gyro: Vector3::zeros(),
            last_fix: initial.timestamp,
            last_nis: None,
            stats: EstimatorStats::default(),
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn state(&self) -> &FilterState {
        &self.current
    }

    /// Estimated full state; angular rate is the last bias-corrected gyro.
    pub fn state_vector(&self) -> StateVector {
        StateVector {
            pose: self.current.pose(),
            linear_velocity: self.current.velocity,
            angular_velocity: self.last_gyro - self.current.gyro_bias,
            timestamp: self.current.timestamp,
        }
    }

    pub fn last_nis(&self) -> Option<f64> {
        self.last_nis
    }

    /// Seconds since the newest applied fix.
    pub fn outage(&self) -> f64 {
        (self.current.timestamp - self.last_fix).max(0.0)
    }

    pub fn degraded(&self) -> bool {
        self.outage() >= self.config.outage_limit - TIME_EPS
    }

    pub fn buffered_span(&self) -> f64 {
        self.entries
            .front()
            .map_or(0.0, |e| self.current.timestamp - e.prior.timestamp)
    }

    fn step(&self, fs: &FilterState, imu: &ImuSample, dt: f64) -> Result<FilterState, EstimatorError> {
        predict(fs, imu, dt, &self.config.process_noise, self.config.gravity)
    }

    fn apply_all(&mut self, prior: &FilterState, meas: &[PoseMeasurement]) -> Result<FilterState, EstimatorError> {
        let mut s = *prior;
        for m in meas {
            let (next, nis) = update_pose(&s, m, self.config.inflation)?;
            s = next;
            self.last_nis = Some(nis);
        }
        Ok(s)
    }

    /// Advances by `dt` using `imu`, held constant over the interval.
    pub fn propagate(&mut self, imu: &ImuSample, dt: f64) -> Result<(), EstimatorError> {
        let next = self.step(&self.current, imu, dt)?;
        self.entries.push_back(Entry {
            prior: self.head_prior,
            meas: std::mem::take(&mut self.head_meas),
            imu: *imu,
            dt,
        });
        self.head_prior = next;
        self.current = next;
        self.last_gyro = imu.gyro;
        self.stats.predictions += 1;
        let horizon = next.timestamp - self.config.buffer_window - TIME_EPS;
        while self.entries.front().is_some_and(|e| e.prior.timestamp < horizon) {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Applies `meas` at its capture time. Returns `Ok(false)` when the
    /// capture is older than the buffer and the measurement was dropped.
    pub fn update_delayed(&mut self, meas: PoseMeasurement) -> Result<bool, EstimatorError> {
        meas.validate()?;
        let tc = meas.capture_timestamp;
        if tc >= self.head_prior.timestamp - TIME_EPS {
            self.head_meas.push(meas);
            self.head_meas.sort_by(sort_key);
            let head = self.head_meas.clone();
            self.current = self.apply_all(&self.head_prior.clone(), &head)?;
        } else {
            let oldest = self.entries.front().map(|e| e.prior.timestamp);
            if oldest.is_none_or(|t0| tc < t0 - TIME_EPS) {
                self.stats.dropped_stale += 1;
                log::warn!(
                    "pose measurement captured at {tc:.3} s is outside the {:.3} s buffer; dropped",
                    self.config.buffer_window
                );
                return Ok(false);
            }
            let idx = self.entries.partition_point(|e| e.prior.timestamp <= tc + TIME_EPS) - 1;
            self.entries[idx].meas.push(meas);
            self.entries[idx].meas.sort_by(sort_key);
            self.replay_from(idx)?;
        }
        self.last_fix = self.last_fix.max(tc);
        self.stats.updates += 1;
        Ok(true)
    }

    fn replay_from(&mut self, idx: usize) -> Result<(), EstimatorError> {
        let mut s = self.entries[idx].prior;
        for j in idx..self.entries.len() {
            self.entries[j].prior = s;
            let meas = self.entries[j].meas.clone();
            let post = self.apply_all(&s, &meas)?;
            s = self.step(&post, &self.entries[j].imu, self.entries[j].dt)?;
        }
        self.head_prior = s;
        let head = self.head_meas.clone();
        self.current = self.apply_all(&s, &head)?;
        Ok(())
    }

    /// Records a vision epoch without a fix. The state is untouched.
    pub fn handle_no_fix(&mut self) {
        self.stats.missed_fixes += 1;
        if self.degraded() {
            log::debug!("estimate degraded: {:.2} s without a fix", self.outage());
        }
    }
}
