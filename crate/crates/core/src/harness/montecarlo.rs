//! Seeded Monte-Carlo study of delayed-filter consistency on a closed-loop
//! flight with synthetic pose fixes.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::HarnessError;
use crate::estimator::{
    chi_square_mean_bounds, consistency_stats, nees, DelayedEskf, EstimatorConfig, FilterState, PoseMeasurement,
};
use crate::geometry::{exp_map, Pose, StateVector};
use crate::vehicle::{
    dynamics_step, geometric_control, state_derivative, ImuModel, ImuNoise, ReferenceTrajectory, VehicleParams,
};

/// NEES over position, velocity and attitude error.
pub const NEES_DOF: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeesRun {
    pub seed: u64,
    /// NEES at the end of the run.
    pub final_nees: f64,
    /// Time-averaged NEES over the 1 Hz epochs of the run.
    pub mean_nees: f64,
    /// Fraction of epochs inside the single-sample 95% interval.
    pub epoch_coverage: f64,
}

#[derive(Debug, Clone)]
pub struct NeesStudy {
    pub runs: Vec<NeesRun>,
    /// Two-sided 95% interval of a single chi-square sample.
    pub bounds: (f64, f64),
}

impl NeesStudy {
    /// Fraction of runs whose final NEES lies inside `bounds`.
    pub fn fraction_in_bounds(&self) -> f64 {
        let (lo, hi) = self.bounds;
        let n = self.runs.iter().filter(|r| r.final_nees >= lo && r.final_nees <= hi).count();
        n as f64 / self.runs.len().max(1) as f64
    }

    /// Ensemble average of final NEES; about `NEES_DOF` for a consistent filter.
    pub fn ensemble_mean(&self) -> f64 {
        self.runs.iter().map(|r| r.final_nees).sum::<f64>() / self.runs.len().max(1) as f64
    }

    /// Two-sided 95% interval for `ensemble_mean`.
    pub fn ensemble_bounds(&self) -> (f64, f64) {
        chi_square_mean_bounds(NEES_DOF, self.runs.len().max(1), 0.95)
    }
}

/// One seeded flight: a looping waypoint circuit flown on truth, 10 Hz pose
/// fixes with 100 ms latency, 1 kHz IMU.
pub fn nees_run(seed: u64, duration: f64, config: &EstimatorConfig) -> Result<NeesRun, HarnessError> {
    const HZ: u64 = 1000;
    const FIX_EVERY: u64 = 100;
    const LATENCY_STEPS: u64 = 100;
    const POS_SIGMA: f64 = 0.05;
    const ROT_SIGMA: f64 = 0.01;
    let dt = 1.0 / HZ as f64;
    let params = VehicleParams::default();
    let circuit = ReferenceTrajectory::through(
        &[
            Vector3::new(0.0, 0.0, 2.0),
            Vector3::new(3.0, 2.0, 3.0),
            Vector3::new(-2.0, 3.0, 2.5),
            Vector3::new(0.0, -3.0, 2.0),
        ],
        1.5,
        0.6,
        0.2,
        0.0,
    )?;
    let mut imu = ImuModel::new(ImuNoise::default(), params.gravity, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed_0000));
    let mut gauss3 = move || {
        let mut n = || -> f64 { StandardNormal.sample(&mut rng) };
        Vector3::new(n(), n(), n())
    };

    let mut truth = StateVector::at_rest(Pose::from_translation(Vector3::new(0.0, 0.0, 2.0)), 0.0);
    let mut init = FilterState::new(&truth, config.initial_cov());
    init.position += gauss3() * config.init_position_sigma;
    init.velocity += gauss3() * config.init_velocity_sigma;
    init.rotation = init.rotation * exp_map(&(gauss3() * config.init_attitude_sigma));
    let mut filter = DelayedEskf::new(init, config.clone())?;

    let (lo, hi) = chi_square_mean_bounds(NEES_DOF, 1, 0.95);
    let mut pending: VecDeque<(u64, PoseMeasurement)> = VecDeque::new();
    let mut series = Vec::new();
    let steps = (duration * HZ as f64).round() as u64;
    let mut last = f64::NAN;
    for k in 0..steps {
        let t = k as f64 / HZ as f64;
        let mut reference = circuit.sample(t % circuit.duration());
        reference.yaw = 0.5 * (0.3 * t).sin();
        let ctrl = geometric_control(&truth, &reference, &params);
        let (accel, _) = state_derivative(&truth, &ctrl.command, &params);
        let sample = imu.sample(&truth, &accel, dt);
        truth = dynamics_step(&truth, &ctrl.command, &params, dt)?;
        filter.propagate(&sample, dt)?;
        if (k + 1) % FIX_EVERY == 0 {
            let pose = Pose::new(
                truth.pose.position + gauss3() * POS_SIGMA,
                truth.pose.rotation * exp_map(&(gauss3() * ROT_SIGMA)),
            );
            pending.push_back((
                k + LATENCY_STEPS,
                PoseMeasurement {
                    pose,
                    position_cov: Matrix3::identity() * POS_SIGMA * POS_SIGMA,
                    rotation_sigma: ROT_SIGMA,
                    capture_timestamp: truth.timestamp,
                    arrival_timestamp: truth.timestamp + LATENCY_STEPS as f64 * dt,
                },
            ));
        }
        while pending.front().is_some_and(|(at, _)| *at == k) {
            let (_, m) = pending.pop_front().expect("front checked");
            filter.update_delayed(m)?;
        }
        if (k + 1) % HZ == 0 || k + 1 == steps {
            let fs = filter.state();
            let e = fs.error_from(&truth);
            let c = fs.cov.fixed_view::<9, 9>(0, 0).into_owned();
            last = nees(&DVector::from_column_slice(e.as_slice()), &DMatrix::from_column_slice(9, 9, c.as_slice()))?;
            if (k + 1) % HZ == 0 {
                series.push(last);
            }
        }
    }
    let summary = consistency_stats(&series, NEES_DOF)
        .ok_or_else(|| HarnessError::Config(format!("duration {duration} s is too short for a NEES run")))?;
    let coverage = series.iter().filter(|v| **v >= lo && **v <= hi).count() as f64 / series.len() as f64;
    Ok(NeesRun {
        seed,
        final_nees: last,
        mean_nees: summary.mean,
        epoch_coverage: coverage,
    })
}

/// Runs `nees_run` for every seed in parallel; results are in seed order.
pub fn nees_monte_carlo(
    seeds: impl IntoIterator<Item = u64>,
    duration: f64,
    config: &EstimatorConfig,
) -> Result<NeesStudy, HarnessError> {
    let seeds: Vec<u64> = seeds.into_iter().collect();
    let runs = seeds
        .par_iter()
        .map(|s| nees_run(*s, duration, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NeesStudy {
        runs,
        bounds: chi_square_mean_bounds(NEES_DOF, 1, 0.95),
    })
}
