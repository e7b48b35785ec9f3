use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::PoseError;

/// One rigid ship part and its 3D keypoints (ship frame, metres).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub class_id: u8,
    pub name: String,
    pub model_points: Vec<[f64; 3]>,
}

impl ObjectModel {
    pub fn keypoint_count(&self) -> usize {
        self.model_points.len()
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.model_points[i])
    }

    /// Eight corners of an axis-aligned box.
    pub fn from_box(class_id: u8, name: &str, min: [f64; 3], max: [f64; 3]) -> Self {
        let mut points = Vec::with_capacity(8);
        for &x in &[min[0], max[0]] {
            for &y in &[min[1], max[1]] {
                for &z in &[min[2], max[2]] {
                    points.push([x, y, z]);
                }
            }
        }
        Self {
            class_id,
            name: name.to_string(),
            model_points: points,
        }
    }

    /// Rank of the centred point set (numerical, relative 1e-9).
    pub fn centered_rank(&self) -> usize {
        let n = self.model_points.len() as f64;
        let c: Vector3<f64> = self.model_points.iter().map(|p| Vector3::from(*p)).sum::<Vector3<f64>>() / n;
        let mut cov = Matrix3::zeros();
        for p in &self.model_points {
            let d = Vector3::from(*p) - c;
            cov += d * d.transpose();
        }
        let ev = cov.symmetric_eigenvalues();
        let max = ev.max();
        if max <= 0.0 {
            return 0;
        }
        ev.iter().filter(|e| **e > 1e-9 * max).count()
    }
}

/// The set of part models, indexed by class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShipModel {
    pub classes: Vec<ObjectModel>,
}

pub const MAX_CLASSES: usize = 6;

impl ShipModel {
    pub fn new(classes: Vec<ObjectModel>) -> Result<Self, PoseError> {
        let m = Self { classes };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        let mut seen = [false; MAX_CLASSES];
        for c in &self.classes {
            let id = c.class_id as usize;
            if id >= MAX_CLASSES {
                return Err(PoseError::InvalidModel(format!("class id {id} out of range")));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(PoseError::InvalidModel(format!("duplicate class id {id}")));
            }
            if c.model_points.len() < 4 {
                return Err(PoseError::InvalidModel(format!(
                    "class {id} has {} keypoints, need at least 4",
                    c.model_points.len()
                )));
            }
            if c.model_points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(PoseError::InvalidModel(format!("class {id} has non-finite points")));
            }
            if c.centered_rank() < 2 {
                return Err(PoseError::InvalidModel(format!("class {id} keypoints are collinear")));
            }
        }
        Ok(())
    }

    pub fn class(&self, id: u8) -> Option<&ObjectModel> {
        self.classes.iter().find(|c| c.class_id == id)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PoseError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PoseError::Io(format!("{}: {e}", path.display())))?;
        let m: ShipModel = serde_json::from_str(&text)
            .map_err(|e| PoseError::InvalidModel(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PoseError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("ship model serializes");
        std::fs::write(path, text).map_err(|e| PoseError::Io(format!("{}: {e}", path.display())))
    }

    /// Six-part stand-in ship: origin at the flight-deck centre, x forward,
    /// z up, eight box-corner keypoints per part.
    pub fn default_ship() -> Self {
        let parts = [
            ("stern", [-7.0, -3.5, -2.5], [-5.0, 3.5, -0.3]),
            ("flight_deck", [-4.5, -3.0, -0.3], [4.5, 3.0, 0.0]),
            ("hangar", [5.0, -2.5, 0.0], [8.0, 2.5, 2.5]),
            ("superstructure", [8.0, -2.0, 0.0], [13.0, 2.0, 5.0]),
            ("mast", [10.0, -0.5, 5.0], [11.0, 0.5, 8.0]),
            ("bow", [13.0, -3.0, -2.5], [22.0, 3.0, 1.0]),
        ];
        let classes = parts
            .iter()
            .enumerate()
            .map(|(i, (name, lo, hi))| ObjectModel::from_box(i as u8, name, *lo, *hi))
            .collect();
        Self { classes }
    }
}
