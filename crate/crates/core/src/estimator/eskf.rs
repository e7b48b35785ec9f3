use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use super::{EstimatorError, PoseMeasurement};
use crate::geometry::{exp_map, hat, log_map_unchecked, Pose, Rotation, StateVector};
use crate::vehicle::{ImuNoise, ImuSample};

pub type Cov15 = SMatrix<f64, 15, 15>;

/// Error-state ordering: position, velocity, attitude, gyro bias, accel bias.
pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const ATT: usize = 6;
pub const BG: usize = 9;
pub const BA: usize = 12;

/// Nominal state and error covariance. Attitude errors are right-perturbations:
/// `R_true = R exp(dtheta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Rotation,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub cov: Cov15,
    pub timestamp: f64,
}

impl FilterState {
    pub fn new(state: &StateVector, cov: Cov15) -> Self {
        Self {
            position: state.pose.position,
            velocity: state.linear_velocity,
            rotation: state.pose.rotation,
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            cov,
            timestamp: state.timestamp,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.rotation)
    }

    pub fn position_sigma(&self) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.cov[(POS + i, POS + i)].max(0.0).sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.velocity.iter())
            .chain(self.gyro_bias.iter())
            .chain(self.accel_bias.iter())
            .chain(self.cov.iter())
            .all(|v| v.is_finite())
            && self.rotation.is_finite()
            && self.timestamp.is_finite()
    }

    /// Error of this estimate relative to `truth` as (dp, dv, dtheta).
    pub fn error_from(&self, truth: &StateVector) -> SVector<f64, 9> {
        let dp = truth.pose.position - self.position;
        let dv = truth.linear_velocity - self.velocity;
        let dth = log_map_unchecked(&(self.rotation.inverse() * truth.pose.rotation));
        let mut e = SVector::<f64, 9>::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&dp);
        e.fixed_rows_mut::<3>(3).copy_from(&dv);
        e.fixed_rows_mut::<3>(6).copy_from(&dth);
        e
    }
}

/// Continuous-time process noise densities, usually the IMU's own.
pub fn process_noise(noise: &ImuNoise, dt: f64) -> Cov15 {
    let mut q = Cov15::zeros();
    let mut set = |at: usize, density: f64| {
        for i in 0..3 {
            q[(at + i, at + i)] = density * density * dt;
        }
    };
    set(VEL, noise.accel_density);
    set(ATT, noise.gyro_density);
    set(BG, noise.gyro_bias_walk);
    set(BA, noise.accel_bias_walk);
    q
}

pub(crate) fn symmetrize(p: &mut Cov15) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Propagates with the IMU sample held over `dt`.
pub fn predict(
    fs: &FilterState,
    imu: &ImuSample,
    dt: f64,
    noise: &ImuNoise,
    gravity: f64,
) -> Result<FilterState, EstimatorError> {
    if !(dt > 0.0 && dt <= 0.02) {
        return Err(EstimatorError::InvalidStep(dt));
    }
    if !imu.is_finite() {
        return Err(EstimatorError::NonFinite("imu sample".into()));
    }
    let w = imu.gyro - fs.gyro_bias;
    let a = imu.accel - fs.accel_bias;
    let r = fs.rotation.matrix();
    let acc = r * a - Vector3::z() * gravity;

    let mut out = *fs;
    out.position += fs.velocity * dt + acc * (0.5 * dt * dt);
    out.velocity += acc * dt;
    out.rotation = fs.rotation * exp_map(&(w * dt));
    out.timestamp += dt;

    let mut f = Cov15::identity();
    let i3 = Matrix3::identity();
    f.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(i3 * dt));
    f.fixed_view_mut::<3, 3>(VEL, ATT).copy_from(&(-r * hat(&a) * dt));
    f.fixed_view_mut::<3, 3>(VEL, BA).copy_from(&(-r * dt));
    f.fixed_view_mut::<3, 3>(ATT, ATT).copy_from(&exp_map(&(w * dt)).matrix().transpose());
    f.fixed_view_mut::<3, 3>(ATT, BG).copy_from(&(-i3 * dt));
    out.cov = f * fs.cov * f.transpose() + process_noise(noise, dt);
    symmetrize(&mut out.cov);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(EstimatorError::NonFinite("state after predict".into()))
    }
}

/// Joseph-form pose update. Returns the new state and the innovation's NIS.
pub fn update_pose(fs: &FilterState, meas: &PoseMeasurement, inflation: f64) -> Result<(FilterState, f64), EstimatorError> {
    let mut h = SMatrix::<f64, 6, 15>::zeros();
    h.fixed_view_mut::<3, 3>(0, POS).copy_from(&Matrix3::identity());
    h.fixed_view_mut::<3, 3>(3, ATT).copy_from(&Matrix3::identity());

    let mut r = SMatrix::<f64, 6, 6>::zeros();
    let k2 = inflation * inflation;
    r.fixed_view_mut::<3, 3>(0, 0).copy_from(&(meas.position_cov * k2));
    let rs = meas.rotation_sigma * meas.rotation_sigma * k2;
    r.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * rs));

    let mut y = SVector::<f64, 6>::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(&(meas.pose.position - fs.position));
    y.fixed_rows_mut::<3>(3)
        .copy_from(&log_map_unchecked(&(fs.rotation.inverse() * meas.pose.rotation)));

    let p = fs.cov;
    let s = h * p * h.transpose() + r;
    let s_chol = s
        .cholesky()
        .ok_or_else(|| EstimatorError::NotPositiveDefinite("innovation covariance".into()))?;
    let nis = y.dot(&s_chol.solve(&y));
    let k = (s_chol.solve(&(h * p))).transpose();
    let dx = k * y;

    let ikh = Cov15::identity() - k * h;
    let mut cov = ikh * p * ikh.transpose() + k * r * k.transpose();

    let dth = dx.fixed_rows::<3>(ATT).into_owned();
    // reset Jacobian for the attitude block after injection
    let mut g = Cov15::identity();
    g.fixed_view_mut::<3, 3>(ATT, ATT)
        .copy_from(&(Matrix3::identity() - hat(&dth) * 0.5));
    cov = g * cov * g.transpose();
    symmetrize(&mut cov);

    let mut out = *fs;
    out.position += dx.fixed_rows::<3>(POS);
    out.velocity += dx.fixed_rows::<3>(VEL);
    out.rotation = fs.rotation * exp_map(&dth);
    out.gyro_bias += dx.fixed_rows::<3>(BG);
    out.accel_bias += dx.fixed_rows::<3>(BA);
    out.cov = cov;
    if !out.is_finite() {
        return Err(EstimatorError::NonFinite("state after update".into()));
    }
    Ok((out, nis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_rad;
    use crate::vehicle::{dynamics_step, state_derivative, Command, ImuModel, VehicleParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn init_cov() -> Cov15 {
        let mut d = SVector::<f64, 15>::zeros();
        for i in 0..3 {
            d[POS + i] = 0.01;
            d[VEL + i] = 0.01;
            d[ATT + i] = 1e-3;
            d[BG + i] = 1e-4;
            d[BA + i] = 1e-3;
        }
        Cov15::from_diagonal(&d)
    }

    #[test]
    fn rejects_bad_step() {
        let fs = FilterState::new(&StateVector::default(), init_cov());
        let imu = ImuSample {
            timestamp: 0.0,
            gyro: Vector3::zeros(),
            accel: Vector3::new(0.0, 0.0, 9.81),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
        };
        let n = ImuNoise::default();
        assert!(matches!(predict(&fs, &imu, 0.0, &n, 9.81), Err(EstimatorError::InvalidStep(_))));
        assert!(predict(&fs, &imu, 0.03, &n, 9.81).is_err());
        let mut bad = imu;
        bad.gyro.x = f64::NAN;
        assert!(predict(&fs, &bad, 0.001, &n, 9.81).is_err());
    }

    #[test]
    fn noise_free_hover_tracks_truth() {
        let p = VehicleParams::default();
        let mut truth = StateVector::at_rest(Pose::new(Vector3::new(1.0, 2.0, 3.0), Rotation::rot_z(0.4)), 0.0);
        let mut imu = ImuModel::new(ImuNoise::zero(), p.gravity, 0);
        let mut fs = FilterState::new(&truth, init_cov());
        let dt = 0.001;
        let cmd = Command::hover(&p);
        for _ in 0..10_000 {
            let (acc, _) = state_derivative(&truth, &cmd, &p);
            let m = imu.sample(&truth, &acc, dt);
            fs = predict(&fs, &m, dt, &ImuNoise::default(), p.gravity).unwrap();
            truth = dynamics_step(&truth, &cmd, &p, dt).unwrap();
        }
        assert!((fs.position - truth.pose.position).norm() < 1e-6);
        assert!((fs.velocity - truth.linear_velocity).norm() < 1e-6);
        assert!(geodesic_rad(&fs.rotation, &truth.pose.rotation) < 1e-6);
        assert!((fs.timestamp - truth.timestamp).abs() < 1e-9);
    }

    fn meas_at(truth: &StateVector, sigma_p: f64, sigma_r: f64, rng: &mut ChaCha8Rng) -> PoseMeasurement {
        let n = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let dp = Vector3::new(n(rng), n(rng), n(rng)) * sigma_p;
        let dr = Vector3::new(n(rng), n(rng), n(rng)) * sigma_r;
        PoseMeasurement {
            pose: Pose::new(truth.pose.position + dp, truth.pose.rotation * exp_map(&dr)),
            position_cov: Matrix3::identity() * sigma_p * sigma_p,
            rotation_sigma: sigma_r,
            capture_timestamp: truth.timestamp,
            arrival_timestamp: truth.timestamp,
        }
    }

    #[test]
    fn accurate_measurement_reduces_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 500;
        let mut decreased = 0;
        for _ in 0..trials {
            let truth = StateVector::at_rest(Pose::new(Vector3::new(2.0, -1.0, 3.0), Rotation::from_ypr(0.3, 0.1, 0.0)), 1.0);
            let mut fs = FilterState::new(&truth, init_cov());
            // perturb the estimate consistently with its covariance
            let n = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
            fs.position += Vector3::new(n(&mut rng), n(&mut rng), n(&mut rng)) * 0.1;
            let before = (fs.position - truth.pose.position).norm();
            let m = meas_at(&truth, 1e-4, 1e-5, &mut rng);
            let (post, _) = update_pose(&fs, &m, 1.0).unwrap();
            if (post.position - truth.pose.position).norm() < before {
                decreased += 1;
            }
        }
        assert!(decreased as f64 >= 0.99 * trials as f64, "{decreased}");
    }

    #[test]
    fn joseph_update_keeps_cov_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = StateVector::default();
        let mut fs = FilterState::new(&truth, init_cov());
        let imu = ImuSample {
            timestamp: 0.0,
            gyro: Vector3::new(0.1, -0.2, 0.3),
            accel: Vector3::new(0.5, 0.0, 9.81),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
        };
        let mut zero_q = ImuNoise::zero();
        zero_q.gyro_density = 0.0;
        for k in 0..200 {
            fs = predict(&fs, &imu, 0.005, &zero_q, 9.81).unwrap();
            if k % 20 == 0 {
                let before = fs.cov;
                let m = meas_at(&truth, 0.05, 0.01, &mut rng);
                fs = update_pose(&fs, &m, 1.0).unwrap().0;
                // updates never add uncertainty
                assert!(fs.cov.trace() <= before.trace() + 1e-15);
                let pos_before: f64 = (0..3).map(|i| before[(i, i)]).sum();
                let pos_after: f64 = (0..3).map(|i| fs.cov[(i, i)]).sum();
                assert!(pos_after <= pos_before);
            }
            assert!((fs.cov - fs.cov.transpose()).abs().max() < 1e-12);
            let eig = fs.cov.symmetric_eigenvalues();
            assert!(eig.min() > 0.0, "{}", eig.min());
        }
    }

    #[test]
    fn reset_keeps_small_attitude_errors_consistent() {
        // a pure attitude measurement moves the estimate toward it
        let truth = StateVector::default();
        let fs = FilterState::new(&truth, init_cov());
        let m = PoseMeasurement {
            pose: Pose::new(Vector3::zeros(), Rotation::rot_x(0.02)),
            position_cov: Matrix3::identity() * 1e-4,
            rotation_sigma: 1e-4,
            capture_timestamp: 0.0,
            arrival_timestamp: 0.0,
        };
        let (post, nis) = update_pose(&fs, &m, 1.0).unwrap();
        assert!(geodesic_rad(&post.rotation, &m.pose.rotation) < 1e-4);
        assert!(nis > 0.0);
    }
}
