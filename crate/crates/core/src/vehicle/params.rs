use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::VehicleError;

/// Positive controller gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gains {
    pub kx: f64,
    pub kv: f64,
    pub kr: f64,
    pub komega: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kx: 8.0,
            kv: 5.0,
            kr: 1.0,
            komega: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// kg.
    pub mass: f64,
    /// Body-frame inertia, kg m^2.
    #[serde(with = "matrix_rows")]
    pub inertia: Matrix3<f64>,
    pub gravity: f64,
    /// Newtons.
    pub max_thrust: f64,
    pub gains: Gains,
}

impl Default for VehicleParams {
    fn default() -> Self {
        let mass = 1.5;
        let gravity = 9.81;
        Self {
            mass,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.02, 0.02, 0.04)),
            gravity,
            max_thrust: 2.5 * mass * gravity,
            gains: Gains::default(),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        let bad = |m: &str| Err(VehicleError::InvalidParams(m.into()));
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad("mass must be positive");
        }
        if !(self.gravity >= 0.0 && self.gravity.is_finite()) {
            return bad("gravity must be non-negative");
        }
        if !(self.max_thrust > 0.0 && self.max_thrust.is_finite()) {
            return bad("max thrust must be positive");
        }
        let j = &self.inertia;
        if (j - j.transpose()).abs().max() > 1e-12 * j.abs().max() {
            return bad("inertia must be symmetric");
        }
        if j.cholesky().is_none() {
            return bad("inertia must be positive definite");
        }
        let g = &self.gains;
        if ![g.kx, g.kv, g.kr, g.komega].iter().all(|k| *k > 0.0 && k.is_finite()) {
            return bad("gains must be positive");
        }
        Ok(())
    }

    pub fn inertia_inv(&self) -> Matrix3<f64> {
        self.inertia.try_inverse().unwrap_or_else(Matrix3::zeros)
    }
}

mod matrix_rows {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Ok(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        VehicleParams::default().validate().unwrap();
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = VehicleParams::default();
        p.mass = 0.0;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::default();
        p.inertia[(0, 0)] = -1.0;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::default();
        p.inertia[(0, 1)] = 0.01;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::default();
        p.gains.kv = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let p = VehicleParams::default();
        let s = toml::to_string(&p).unwrap();
        let back: VehicleParams = toml::from_str(&s).unwrap();
        assert_eq!(back, p);
        let partial: VehicleParams = toml::from_str("mass = 2.0").unwrap();
        assert_eq!(partial.mass, 2.0);
        assert_eq!(partial.gains, Gains::default());
    }
}
