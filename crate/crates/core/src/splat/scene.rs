use std::path::PathBuf;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::sh::{sh_from_rgb, ShCoeffs};
use super::SplatError;
use crate::geometry::Rotation;

/// One anisotropic 3D Gaussian, stored post-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    /// World frame, metres.
    pub position: Vector3<f64>,
    /// Per-axis standard deviation, metres.
    pub scale: Vector3<f64>,
    /// Orientation of the principal axes.
    pub orientation: Rotation,
    /// In (0, 1).
    pub opacity: f64,
    pub sh: ShCoeffs,
}

impl Gaussian {
    pub fn max_scale(&self) -> f64 {
        self.scale.max()
    }

    pub fn is_valid(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|s| s.is_finite() && *s > 0.0)
            && self.opacity > 0.0
            && self.opacity < 1.0
            && self.orientation.is_finite()
            && self.sh.iter().flatten().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    /// Box enclosing every Gaussian's `position +/- 3 * max_scale`.
    pub fn enclosing(gaussians: &[Gaussian]) -> Option<Aabb> {
        let mut it = gaussians.iter();
        let first = it.next()?;
        let pad = |g: &Gaussian| Vector3::repeat(3.0 * g.max_scale());
        let mut min = first.position - pad(first);
        let mut max = first.position + pad(first);
        for g in it {
            min = min.inf(&(g.position - pad(g)));
            max = max.sup(&(g.position + pad(g)));
        }
        Some(Aabb { min, max })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    File(PathBuf),
    Synthetic(String),
}

/// An immutable, non-empty set of Gaussians.
#[derive(Debug, Clone)]
pub struct SceneModel {
    gaussians: Vec<Gaussian>,
    source: SceneSource,
    bounds: Aabb,
    culled: usize,
}

impl SceneModel {
    pub fn new(gaussians: Vec<Gaussian>, source: SceneSource) -> Result<Self, SplatError> {
        Self::with_culled(gaussians, source, 0)
    }

    pub(crate) fn with_culled(
        gaussians: Vec<Gaussian>,
        source: SceneSource,
        culled: usize,
    ) -> Result<Self, SplatError> {
        let bounds = Aabb::enclosing(&gaussians).ok_or(SplatError::EmptyScene)?;
        Ok(Self {
            gaussians,
            source,
            bounds,
            culled,
        })
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn source(&self) -> &SceneSource {
        &self.source
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    /// Records dropped by the validity filter at load time.
    pub fn culled_on_load(&self) -> usize {
        self.culled
    }
}

/// A requested blob for [`generate_test_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub position: [f64; 3],
    pub scale: [f64; 3],
    /// (w, x, y, z); identity when omitted.
    #[serde(default = "identity_wxyz")]
    pub orientation: [f64; 4],
    pub opacity: f64,
    pub rgb: [f64; 3],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl BlobSpec {
    pub fn isotropic(position: [f64; 3], sigma: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        Self {
            position,
            scale: [sigma; 3],
            orientation: identity_wxyz(),
            opacity,
            rgb,
        }
    }
}

/// Builds a scene from explicit blobs; colour becomes the DC term only.
pub fn generate_test_scene(spec: &[BlobSpec]) -> Result<SceneModel, SplatError> {
    if spec.is_empty() {
        return Err(SplatError::EmptyScene);
    }
    let mut gaussians = Vec::with_capacity(spec.len());
    for (i, b) in spec.iter().enumerate() {
        let [w, x, y, z] = b.orientation;
        let orientation =
            Rotation::from_wxyz(w, x, y, z).map_err(|_| SplatError::InvalidBlob(i))?;
        let g = Gaussian {
            position: Vector3::from(b.position),
            scale: Vector3::from(b.scale),
            orientation,
            opacity: b.opacity,
            sh: sh_from_rgb(b.rgb),
        };
        if !g.is_valid() || b.rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(SplatError::InvalidBlob(i));
        }
        gaussians.push(g);
    }
    SceneModel::new(gaussians, SceneSource::Synthetic(format!("{} blobs", spec.len())))
}
