//! Efficient perspective-n-point: the 3D points are written as weighted sums
//! of a few control points, whose camera-frame coordinates are recovered from
//! the null space of a linear system.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector2, Vector3};

use super::PoseError;
use crate::geometry::{Pose, Rotation};
use crate::splat::Intrinsics;

/// Reprojection error charged to a point at or behind the camera, px.
pub const BEHIND_CAMERA_PENALTY: f64 = 1e6;
const PLANAR_RATIO: f64 = 1e-6;
const GN_MAX_ITERS: usize = 10;
const GN_STEP_TOL: f64 = 1e-8;

/// A 3D model point and where it was observed in the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Ship frame, metres.
    pub model: Vector3<f64>,
    /// Pixels.
    pub pixel: Vector2<f64>,
}

impl Correspondence {
    pub fn new(model: Vector3<f64>, pixel: Vector2<f64>) -> Self {
        Self { model, pixel }
    }
}

/// Ship-to-camera pose (`p_cam = R p_ship + t`) and its reprojection RMS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub pose: Pose,
    pub reprojection_rms: f64,
}

/// RMS pixel distance between projected model points and observations.
pub fn reprojection_rms(pose: &Pose, corr: &[Correspondence], intr: &Intrinsics) -> f64 {
    if corr.is_empty() {
        return 0.0;
    }
    let sum: f64 = corr
        .iter()
        .map(|c| {
            let p = pose.transform_point(&c.model);
            match intr.project(&p) {
                Some(px) => (px - c.pixel).norm_squared(),
                None => BEHIND_CAMERA_PENALTY * BEHIND_CAMERA_PENALTY,
            }
        })
        .sum();
    (sum / corr.len() as f64).sqrt()
}

pub fn epnp_solve(corr: &[Correspondence], intr: &Intrinsics) -> Result<PnpSolution, PoseError> {
    let n = corr.len();
    if n < 4 {
        return Err(PoseError::InsufficientPoints(n));
    }
    if corr
        .iter()
        .any(|c| !c.model.iter().chain(c.pixel.iter()).all(|v| v.is_finite()))
    {
        return Err(PoseError::Degenerate("non-finite correspondence".into()));
    }

    let (ctrl, alphas) = control_points(corr)?;
    let nc = ctrl.len();

    let m = build_m(corr, &alphas, intr);
    let mtm = m.transpose() * &m;
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..3 * nc).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let null: Vec<DVector<f64>> = order[..nc]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..nc)
        .flat_map(|a| (a + 1..nc).map(move |b| (a, b)))
        .collect();
    let rho: DVector<f64> =
        DVector::from_iterator(pairs.len(), pairs.iter().map(|&(a, b)| (ctrl[a] - ctrl[b]).norm_squared()));
    // diffs[p][k]: difference of control points a and b in null vector k
    let diffs: Vec<Vec<Vector3<f64>>> = pairs
        .iter()
        .map(|&(a, b)| {
            null.iter()
                .map(|v| {
                    Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
                })
                .collect()
        })
        .collect();

    let model: Vec<Vector3<f64>> = corr.iter().map(|c| c.model).collect();
    let mut best: Option<PnpSolution> = None;
    let inits = (1..=3usize)
        .filter_map(|dim| initial_betas(dim, nc, &diffs, &rho))
        .chain(first_row_betas(nc, &diffs, &rho))
        .flat_map(|b| sign_variants(&b));
    for mut beta in inits {
        gauss_newton(&mut beta, &diffs, &rho);
        let Some(pose) = recover_pose(&beta, &null, &alphas, &model) else {
            continue;
        };
        let rms = reprojection_rms(&pose, corr, intr);
        if !rms.is_finite() {
            continue;
        }
        if best.is_none_or(|b| rms < b.reprojection_rms) {
            best = Some(PnpSolution {
                pose,
                reprojection_rms: rms,
            });
        }
    }
    best.ok_or_else(|| PoseError::Degenerate("no valid EPnP candidate".into()))
}

/// Centroid plus principal axes scaled to the data spread, and the
/// barycentric weights of each point. Planar sets get three control points.
fn control_points(corr: &[Correspondence]) -> Result<(Vec<Vector3<f64>>, Vec<Vec<f64>>), PoseError> {
    let n = corr.len() as f64;
    let c0 = corr.iter().map(|c| c.model).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for c in corr {
        let d = c.model - c0;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sv = order.map(|i| eig.eigenvalues[i].max(0.0).sqrt());
    if !(sv[0] > 0.0) || sv[1] < PLANAR_RATIO * sv[0] {
        return Err(PoseError::Degenerate("model points are collinear".into()));
    }
    let axes = if sv[2] < PLANAR_RATIO * sv[0] { 2 } else { 3 };

    let mut ctrl = vec![c0];
    let mut dirs = Vec::with_capacity(axes);
    for &i in &order[..axes] {
        let d: Vector3<f64> = eig.eigenvectors.column(i).into_owned() * (eig.eigenvalues[i] / n).sqrt();
        ctrl.push(c0 + d);
        dirs.push(d);
    }
    let alphas = corr
        .iter()
        .map(|c| {
            let d = c.model - c0;
            let mut a = vec![0.0; axes + 1];
            for (k, dir) in dirs.iter().enumerate() {
                a[k + 1] = d.dot(dir) / dir.norm_squared();
            }
            a[0] = 1.0 - a[1..].iter().sum::<f64>();
            a
        })
        .collect();
    Ok((ctrl, alphas))
}

fn build_m(corr: &[Correspondence], alphas: &[Vec<f64>], intr: &Intrinsics) -> DMatrix<f64> {
    let nc = alphas[0].len();
    let mut m = DMatrix::zeros(2 * corr.len(), 3 * nc);
    for (i, (c, a)) in corr.iter().zip(alphas).enumerate() {
        let u = (c.pixel.x - intr.cx) / intr.fx;
        let v = (c.pixel.y - intr.cy) / intr.fy;
        for (j, &aj) in a.iter().enumerate() {
            m[(2 * i, 3 * j)] = aj;
            m[(2 * i, 3 * j + 2)] = -aj * u;
            m[(2 * i + 1, 3 * j + 1)] = aj;
            m[(2 * i + 1, 3 * j + 2)] = -aj * v;
        }
    }
    m
}

/// Linearized distance constraints for the first `dim` null vectors.
fn initial_betas(
    dim: usize,
    nc: usize,
    diffs: &[Vec<Vector3<f64>>],
    rho: &DVector<f64>,
) -> Option<Vec<f64>> {
    if dim > nc {
        return None;
    }
    let prods: Vec<(usize, usize)> = (0..dim).flat_map(|i| (i..dim).map(move |j| (i, j))).collect();
    if prods.len() > diffs.len() {
        return None;
    }
    let l = DMatrix::from_fn(diffs.len(), prods.len(), |p, q| {
        let (i, j) = prods[q];
        let s = if i == j { 1.0 } else { 2.0 };
        s * diffs[p][i].dot(&diffs[p][j])
    });
    let b = l.svd(true, true).solve(rho, 1e-14).ok()?;
    let mut beta = vec![0.0; nc];
    beta[0] = b[0].abs().sqrt();
    for k in 1..dim {
        let bkk = b[prods.iter().position(|&p| p == (k, k))?];
        let b0k = b[k];
        beta[k] = b0k.signum() * bkk.abs().sqrt();
    }
    beta.iter().all(|v| v.is_finite()).then_some(beta)
}

/// Extra start using only the products of the first beta with every other
/// one, which lets all null vectors contribute.
fn first_row_betas(nc: usize, diffs: &[Vec<Vector3<f64>>], rho: &DVector<f64>) -> Option<Vec<f64>> {
    let l = DMatrix::from_fn(diffs.len(), nc, |p, q| {
        let s = if q == 0 { 1.0 } else { 2.0 };
        s * diffs[p][0].dot(&diffs[p][q])
    });
    let b = l.svd(true, true).solve(rho, 1e-14).ok()?;
    let b0 = b[0].abs().sqrt();
    if !(b0 > 0.0) {
        return None;
    }
    let sign = b[0].signum();
    let beta: Vec<f64> = (0..nc).map(|k| if k == 0 { b0 } else { sign * b[k] / b0 }).collect();
    beta.iter().all(|v| v.is_finite()).then_some(beta)
}

/// The start itself plus every sign pattern of the trailing betas. The
/// distance constraints cannot tell a configuration from its mirror image, so
/// with few points a single start can settle on the wrong one.
fn sign_variants(beta: &[f64]) -> Vec<Vec<f64>> {
    let free: Vec<usize> = (1..beta.len()).filter(|&k| beta[k] != 0.0).collect();
    (0..1usize << free.len())
        .map(|mask| {
            let mut b = beta.to_vec();
            for (bit, &k) in free.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    b[k] = -b[k];
                }
            }
            b
        })
        .collect()
}

fn gauss_newton(beta: &mut [f64], diffs: &[Vec<Vector3<f64>>], rho: &DVector<f64>) {
    let k = beta.len();
    let np = diffs.len();
    for _ in 0..GN_MAX_ITERS {
        let mut r = DVector::zeros(np);
        let mut jac = DMatrix::zeros(np, k);
        for p in 0..np {
            let d: Vector3<f64> = (0..k).map(|m| diffs[p][m] * beta[m]).sum();
            r[p] = d.norm_squared() - rho[p];
            for m in 0..k {
                jac[(p, m)] = 2.0 * diffs[p][m].dot(&d);
            }
        }
        let Ok(step) = jac.svd(true, true).solve(&(-r), 1e-14) else {
            return;
        };
        if !step.iter().all(|v| v.is_finite()) {
            return;
        }
        for (b, s) in beta.iter_mut().zip(step.iter()) {
            *b += s;
        }
        let scale = beta.iter().map(|b| b * b).sum::<f64>().sqrt().max(1.0);
        if step.norm() < GN_STEP_TOL * scale {
            return;
        }
    }
}

fn recover_pose(
    beta: &[f64],
    null: &[DVector<f64>],
    alphas: &[Vec<f64>],
    model: &[Vector3<f64>],
) -> Option<Pose> {
    let nc = alphas[0].len();
    let ctrl_cam: Vec<Vector3<f64>> = (0..nc)
        .map(|j| {
            beta.iter()
                .zip(null)
                .map(|(b, v)| Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]) * *b)
                .sum()
        })
        .collect();
    let mut cam: Vec<Vector3<f64>> = alphas
        .iter()
        .map(|a| a.iter().zip(&ctrl_cam).map(|(w, c)| c * *w).sum())
        .collect();
    if cam.iter().map(|p| p.z).sum::<f64>() < 0.0 {
        cam.iter_mut().for_each(|p| *p = -*p);
    }
    align(model, &cam)
}

/// Rigid transform taking `src` onto `dst` in the least-squares sense.
/// Returns `None` for a genuine reflection or non-finite input.
pub(crate) fn align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        let sv = svd.singular_values;
        if sv.min() > PLANAR_RATIO * sv.max() {
            return None;
        }
        fix[(2, 2)] = -1.0;
    }
    // singular values come sorted, so the flipped axis is the weakest one
    let r = v * fix * u.transpose();
    let t = cd - r * cs;
    let pose = Pose::new(t, Rotation::from_matrix(&r));
    pose.is_finite().then_some(pose)
}
