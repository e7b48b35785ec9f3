//! Real spherical harmonics up to degree 3, in the basis ordering and sign
//! convention of the reference Gaussian splatting rasterizer.

use nalgebra::Vector3;

/// Coefficients per channel for degree 3.
pub const SH_COEFFS: usize = 16;

/// `sh[k][c]`: basis function `k`, colour channel `c`.
pub type ShCoeffs = [[f64; 3]; SH_COEFFS];

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values for a unit direction.
pub fn sh_basis(dir: &Vector3<f64>) -> [f64; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * xy,
        SH_C2[1] * yz,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * xz,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * xy * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Colour seen along `view_dir` (unit, pointing from the camera to the
/// Gaussian): `clamp(0.5 + sum_k sh[k] * Y_k(view_dir), 0, 1)`.
pub fn evaluate_sh(sh: &ShCoeffs, view_dir: &Vector3<f64>) -> [f64; 3] {
    let basis = sh_basis(view_dir);
    let mut rgb = [0.5f64; 3];
    for (b, coeff) in basis.iter().zip(sh.iter()) {
        for c in 0..3 {
            rgb[c] += b * coeff[c];
        }
    }
    rgb.map(|v| v.clamp(0.0, 1.0))
}

/// DC-only coefficients that evaluate to `rgb` from every direction.
pub fn sh_from_rgb(rgb: [f64; 3]) -> ShCoeffs {
    let mut sh = [[0.0; 3]; SH_COEFFS];
    for c in 0..3 {
        sh[0][c] = (rgb[c] - 0.5) / SH_C0;
    }
    sh
}
