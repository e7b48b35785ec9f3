use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::StateVector;

/// Continuous-time noise parameters, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoise {
    /// rad/s/sqrt(Hz).
    pub gyro_density: f64,
    /// m/s^2/sqrt(Hz).
    pub accel_density: f64,
    /// rad/s^2/sqrt(Hz).
    pub gyro_bias_walk: f64,
    /// m/s^3/sqrt(Hz).
    pub accel_bias_walk: f64,
    pub initial_gyro_bias: [f64; 3],
    pub initial_accel_bias: [f64; 3],
}

impl Default for ImuNoise {
    /// Roughly a tactical-grade MEMS unit.
    fn default() -> Self {
        Self {
            gyro_density: 0.0035,
            accel_density: 0.0014,
            gyro_bias_walk: 1e-5,
            accel_bias_walk: 1e-4,
            initial_gyro_bias: [0.0; 3],
            initial_accel_bias: [0.0; 3],
        }
    }
}

impl ImuNoise {
    pub fn zero() -> Self {
        Self {
            gyro_density: 0.0,
            accel_density: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            initial_gyro_bias: [0.0; 3],
            initial_accel_bias: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Body rate, rad/s.
    pub gyro: Vector3<f64>,
    /// Body specific force, m/s^2.
    pub accel: Vector3<f64>,
    /// Biases in effect for this sample.
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite()
            && self.gyro.iter().chain(self.accel.iter()).all(|v| v.is_finite())
    }
}

/// Seeded IMU with white noise and random-walk biases.
#[derive(Debug, Clone)]
pub struct ImuModel {
    pub noise: ImuNoise,
    pub gravity: f64,
    gyro_bias: Vector3<f64>,
    accel_bias: Vector3<f64>,
    rng: ChaCha8Rng,
}

impl ImuModel {
    pub fn new(noise: ImuNoise, gravity: f64, seed: u64) -> Self {
        Self {
            noise,
            gravity,
            gyro_bias: noise.initial_gyro_bias.into(),
            accel_bias: noise.initial_accel_bias.into(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal3(&mut self) -> Vector3<f64> {
        Vector3::from_fn(|_, _| StandardNormal.sample(&mut self.rng))
    }

    /// Measures `state` whose world-frame acceleration is `accel_world`.
    /// `dt` is the sample period; it sets the discrete noise level and the
    /// bias step applied after this sample.
    pub fn sample(&mut self, state: &StateVector, accel_world: &Vector3<f64>, dt: f64) -> ImuSample {
        let n = self.noise;
        let sd = if dt > 0.0 { 1.0 / dt.sqrt() } else { 0.0 };
        let ng = self.normal3() * (n.gyro_density * sd);
        let na = self.normal3() * (n.accel_density * sd);
        let specific = state
            .pose
            .rotation
            .inverse_rotate(&(accel_world + Vector3::z() * self.gravity));
        let out = ImuSample {
            timestamp: state.timestamp,
            gyro: state.angular_velocity + self.gyro_bias + ng,
            accel: specific + self.accel_bias + na,
            gyro_bias: self.gyro_bias,
            accel_bias: self.accel_bias,
        };
        let wg = self.normal3() * (n.gyro_bias_walk * dt.max(0.0).sqrt());
        let wa = self.normal3() * (n.accel_bias_walk * dt.max(0.0).sqrt());
        self.gyro_bias += wg;
        self.accel_bias += wa;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Rotation};

    #[test]
    fn hover_reads_gravity() {
        let mut imu = ImuModel::new(ImuNoise::zero(), 9.81, 1);
        let s = StateVector::at_rest(Pose::new(Vector3::new(1.0, 2.0, 3.0), Rotation::rot_z(0.7)), 2.0);
        let m = imu.sample(&s, &Vector3::zeros(), 0.001);
        assert_eq!(m.gyro, Vector3::zeros());
        assert!((m.accel - Vector3::new(0.0, 0.0, 9.81)).norm() < 1e-14);
        assert_eq!(m.timestamp, 2.0);
    }

    #[test]
    fn free_fall_reads_zero() {
        let mut imu = ImuModel::new(ImuNoise::zero(), 9.81, 1);
        let s = StateVector::at_rest(Pose::new(Vector3::zeros(), Rotation::from_ypr(0.3, 0.4, -0.2)), 0.0);
        let m = imu.sample(&s, &Vector3::new(0.0, 0.0, -9.81), 0.001);
        assert!(m.accel.norm() < 1e-14);
    }

    #[test]
    fn seeded_repeatable() {
        let s = StateVector::default();
        let mut a = ImuModel::new(ImuNoise::default(), 9.81, 42);
        let mut b = ImuModel::new(ImuNoise::default(), 9.81, 42);
        for _ in 0..100 {
            assert_eq!(a.sample(&s, &Vector3::zeros(), 0.001), b.sample(&s, &Vector3::zeros(), 0.001));
        }
    }

    #[test]
    fn bias_walk_spread() {
        // after T seconds each bias axis has variance walk^2 * T
        let noise = ImuNoise {
            gyro_bias_walk: 0.01,
            ..ImuNoise::zero()
        };
        let s = StateVector::default();
        let trials = 400;
        let mut var = 0.0;
        for seed in 0..trials {
            let mut imu = ImuModel::new(noise, 9.81, seed);
            for _ in 0..100 {
                imu.sample(&s, &Vector3::zeros(), 0.01);
            }
            var += imu.gyro_bias.norm_squared() / 3.0;
        }
        var /= trials as f64;
        let expected = 0.01f64.powi(2) * 1.0;
        assert!((var / expected - 1.0).abs() < 0.15, "{var} vs {expected}");
    }

    /// Overlapping Allan deviation at cluster size `m`.
    fn allan_dev(x: &[f64], dt: f64, m: usize) -> f64 {
        // cumulative sum gives the angle
        let mut theta = vec![0.0; x.len() + 1];
        for (i, v) in x.iter().enumerate() {
            theta[i + 1] = theta[i] + v * dt;
        }
        let tau = m as f64 * dt;
        let n = theta.len();
        let mut acc = 0.0;
        for k in 0..n - 2 * m {
            let d = theta[k + 2 * m] - 2.0 * theta[k + m] + theta[k];
            acc += d * d;
        }
        (acc / (2.0 * tau * tau * (n - 2 * m) as f64)).sqrt()
    }

    #[test]
    fn allan_deviation_matches_density() {
        let density = 0.004;
        let noise = ImuNoise {
            gyro_density: density,
            ..ImuNoise::zero()
        };
        let dt = 0.001;
        let mut imu = ImuModel::new(noise, 9.81, 7);
        let s = StateVector::default();
        let x: Vec<f64> = (0..1_000_000).map(|_| imu.sample(&s, &Vector3::zeros(), dt).gyro.x).collect();
        let mut pts = Vec::new();
        for m in [10, 100, 1000] {
            let tau = m as f64 * dt;
            let sigma = allan_dev(&x, dt, m);
            let est = sigma * tau.sqrt();
            assert!((est / density - 1.0).abs() < 0.1, "tau {tau}: {est}");
            pts.push((tau.ln(), sigma.ln()));
        }
        let slope = (pts[2].1 - pts[0].1) / (pts[2].0 - pts[0].0);
        assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
    }
}
