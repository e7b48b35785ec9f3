use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2};

use super::camera::CameraModel;
use super::scene::Gaussian;
use super::sh::evaluate_sh;

/// Screen-space footprint added to every projected covariance, px^2.
pub const COV_DILATION: f64 = 0.3;

/// A Gaussian after EWA projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Pixels.
    pub mean: Vector2<f64>,
    /// Pixels^2, dilated.
    pub cov: Matrix2<f64>,
    /// Camera z, metres.
    pub depth: f64,
    pub color: [f64; 3],
    pub alpha_peak: f64,
}

/// 3D covariance `R S S^T R^T`.
pub fn covariance_3d(g: &Gaussian) -> Matrix3<f64> {
    let r = g.orientation.matrix();
    let s = Matrix3::from_diagonal(&g.scale);
    let m = r * s;
    m * m.transpose()
}

/// Projects `g` through `cam`, or `None` when it lies at/behind the near
/// plane or its mean falls outside the image grown by 3 sigma.
pub fn project_gaussian(g: &Gaussian, cam: &CameraModel, near: f64) -> Option<Splat2D> {
    let intr = &cam.intrinsics;
    let p = cam.world_to_camera(&g.position);
    if p.z <= near {
        return None;
    }
    let inv_z = 1.0 / p.z;
    let mean = Vector2::new(intr.fx * p.x * inv_z + intr.cx, intr.fy * p.y * inv_z + intr.cy);

    let j = Matrix2x3::new(
        intr.fx * inv_z,
        0.0,
        -intr.fx * p.x * inv_z * inv_z,
        0.0,
        intr.fy * inv_z,
        -intr.fy * p.y * inv_z * inv_z,
    );
    let w = cam.pose.rotation.matrix().transpose();
    let t = j * w;
    let mut cov = t * covariance_3d(g) * t.transpose();
    // exact symmetry keeps the conic well defined
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    cov[(0, 0)] += COV_DILATION;
    cov[(1, 1)] += COV_DILATION;

    let sx = 3.0 * cov[(0, 0)].sqrt();
    let sy = 3.0 * cov[(1, 1)].sqrt();
    if mean.x < -sx
        || mean.y < -sy
        || mean.x > intr.width as f64 + sx
        || mean.y > intr.height as f64 + sy
        || !mean.iter().all(|v| v.is_finite())
    {
        return None;
    }

    let view_dir = (g.position - cam.pose.position).normalize();
    Some(Splat2D {
        mean,
        cov,
        depth: p.z,
        color: evaluate_sh(&g.sh, &view_dir),
        alpha_peak: g.opacity,
    })
}
