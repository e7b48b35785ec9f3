use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::PoseEstimate;
use crate::geometry::{Pose, Rotation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub min_confidence: f64,
    /// Pixels.
    pub max_reprojection_rms: f64,
    /// Position sigma of a fully confident part, metres.
    pub sigma0: f64,
    /// Rejection radius in sigmas around the weighted median.
    pub outlier_sigmas: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.9,
            max_reprojection_rms: 8.0,
            sigma0: 0.15,
            outlier_sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionOutcome {
    Fix(PoseEstimate),
    NoFix,
}

impl FusionOutcome {
    pub fn fix(&self) -> Option<&PoseEstimate> {
        match self {
            FusionOutcome::Fix(e) => Some(e),
            FusionOutcome::NoFix => None,
        }
    }

    pub fn is_fix(&self) -> bool {
        matches!(self, FusionOutcome::Fix(_))
    }
}

struct Candidate<'a> {
    est: &'a PoseEstimate,
    conf: f64,
    position: Vector3<f64>,
}

/// Fuses per-part estimates, each paired with its detection confidence.
///
/// Parts failing the confidence or reprojection gate are ignored. With three
/// or more survivors, any whose camera position lies more than
/// `outlier_sigmas` sigmas from the weighted median is discarded (unless that
/// would discard all of them). Positions are averaged with inverse-variance
/// weights, `sigma = sigma0 / confidence`; rotations by the dominant
/// eigenvector of the confidence-weighted quaternion scatter matrix.
pub fn fuse_poses(per_class: &[(PoseEstimate, f64)], cfg: &FusionConfig) -> FusionOutcome {
    let gated: Vec<Candidate> = per_class
        .iter()
        .filter(|(e, c)| {
            c.is_finite()
                && *c >= cfg.min_confidence
                && e.reprojection_rms <= cfg.max_reprojection_rms
                && e.pose.is_finite()
        })
        .map(|(e, c)| Candidate {
            est: e,
            conf: *c,
            position: e.camera_in_ship().position,
        })
        .collect();
    if gated.is_empty() {
        return FusionOutcome::NoFix;
    }
    let inliers = reject_outliers(gated, cfg);

    if let [only] = inliers.as_slice() {
        let var = (cfg.sigma0 / only.conf).powi(2);
        return FusionOutcome::Fix(PoseEstimate {
            pose: only.est.pose,
            position_cov: Matrix3::identity() * var,
            rotation_conf: only.conf,
            class_ids: only.est.class_ids.clone(),
            reprojection_rms: only.est.reprojection_rms,
        });
    }

    let info: Vec<f64> = inliers.iter().map(|c| (c.conf / cfg.sigma0).powi(2)).collect();
    let total: f64 = info.iter().sum();
    let position = inliers
        .iter()
        .zip(&info)
        .map(|(c, w)| c.position * *w)
        .sum::<Vector3<f64>>()
        / total;

    let mut scatter = Matrix4::zeros();
    for c in &inliers {
        let [w, x, y, z] = c.est.camera_in_ship().rotation.wxyz();
        let q = Vector4::new(w, x, y, z);
        scatter += q * q.transpose() * c.conf;
    }
    let eig = SymmetricEigen::new(scatter);
    let top = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(top);
    let rotation = Rotation::from_wxyz(q[0], q[1], q[2], q[3]).unwrap_or_default();

    let conf_sum: f64 = inliers.iter().map(|c| c.conf).sum();
    let rms = inliers
        .iter()
        .map(|c| c.est.reprojection_rms * c.conf)
        .sum::<f64>()
        / conf_sum;
    let mut class_ids: Vec<u8> = inliers.iter().flat_map(|c| c.est.class_ids.iter().copied()).collect();
    class_ids.sort_unstable();
    class_ids.dedup();

    FusionOutcome::Fix(PoseEstimate {
        pose: Pose::new(position, rotation).inverse(),
        position_cov: Matrix3::identity() / total,
        rotation_conf: inliers.iter().map(|c| c.conf * c.conf).sum::<f64>().sqrt(),
        class_ids,
        reprojection_rms: rms,
    })
}

fn reject_outliers<'a>(gated: Vec<Candidate<'a>>, cfg: &FusionConfig) -> Vec<Candidate<'a>> {
    if gated.len() < 3 {
        return gated;
    }
    // Sigmas relative to the most confident part keep the test invariant to
    // a common scaling of confidences.
    let top = gated.iter().map(|c| c.conf).fold(0.0, f64::max);
    let weights: Vec<f64> = gated.iter().map(|c| (c.conf / top).powi(2)).collect();
    let median = Vector3::from_fn(|k, _| {
        weighted_median(&gated.iter().map(|c| c.position[k]).collect::<Vec<_>>(), &weights)
    });
    let keep: Vec<bool> = gated
        .iter()
        .map(|c| {
            let sigma = cfg.sigma0 * top / c.conf;
            (c.position - median).norm() <= cfg.outlier_sigmas * sigma
        })
        .collect();
    if !keep.iter().any(|k| *k) {
        return gated;
    }
    gated
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

/// Smallest value at which the cumulative weight reaches half the total;
/// averages the two neighbours when it lands exactly on the half.
pub(crate) fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let half = weights.iter().sum::<f64>() / 2.0;
    let mut acc = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        acc += weights[i];
        if acc > half {
            return values[i];
        }
        if acc == half {
            return match idx.get(k + 1) {
                Some(&j) => 0.5 * (values[i] + values[j]),
                None => values[i],
            };
        }
    }
    values[idx[idx.len() - 1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_deg;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn est_at(position: Vector3<f64>, rotation: Rotation, id: u8) -> PoseEstimate {
        PoseEstimate {
            pose: Pose::new(position, rotation).inverse(),
            position_cov: Matrix3::identity() * 0.01,
            rotation_conf: 1.0,
            class_ids: vec![id],
            reprojection_rms: 1.0,
        }
    }

    fn fused(inputs: &[(PoseEstimate, f64)]) -> PoseEstimate {
        fuse_poses(inputs, &FusionConfig::default()).fix().cloned().expect("fix")
    }

    #[test]
    fn single_input_passes_through() {
        let e = est_at(Vector3::new(1.0, -2.0, 3.0), Rotation::from_ypr(0.3, 0.1, -0.2), 2);
        let out = fused(&[(e.clone(), 0.95)]);
        assert_eq!(out.pose, e.pose);
        assert_eq!(out.class_ids, vec![2]);
    }

    #[test]
    fn equal_weight_mean() {
        let r = Rotation::from_ypr(0.4, 0.0, 0.0);
        let out = fused(&[
            (est_at(Vector3::zeros(), r, 0), 0.95),
            (est_at(Vector3::new(1.0, 0.0, 0.0), r, 1), 0.95),
        ]);
        let p = out.camera_in_ship().position;
        assert!((p - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        assert!(geodesic_deg(&out.camera_in_ship().rotation, &r) < 1e-9);
        assert_eq!(out.class_ids, vec![0, 1]);
        let var = (0.15f64 / 0.95).powi(2) / 2.0;
        assert!((out.position_cov[(0, 0)] - var).abs() < 1e-15);
    }

    #[test]
    fn gates_give_no_fix() {
        let e = est_at(Vector3::zeros(), Rotation::identity(), 0);
        assert_eq!(fuse_poses(&[(e.clone(), 0.5)], &FusionConfig::default()), FusionOutcome::NoFix);
        let mut bad = e;
        bad.reprojection_rms = 20.0;
        assert_eq!(fuse_poses(&[(bad, 0.99)], &FusionConfig::default()), FusionOutcome::NoFix);
        assert_eq!(fuse_poses(&[], &FusionConfig::default()), FusionOutcome::NoFix);
    }

    #[test]
    fn outlier_is_rejected() {
        let r = Rotation::identity();
        let mut inputs: Vec<_> = (0..4)
            .map(|i| (est_at(Vector3::new(0.01 * i as f64, 0.0, 0.0), r, i), 0.95))
            .collect();
        inputs.push((est_at(Vector3::new(5.0, 0.0, 0.0), r, 4), 0.95));
        let out = fused(&inputs);
        assert_eq!(out.class_ids, vec![0, 1, 2, 3]);
        assert!(out.camera_in_ship().position.x < 0.05);
    }

    #[test]
    fn rotation_mean_handles_sign() {
        let r = Rotation::from_ypr(1.0, 0.2, 0.1);
        let a = est_at(Vector3::zeros(), r, 0);
        let mut b = a.clone();
        // the same rotation written with the opposite quaternion sign
        let q = -r.unit_quaternion().into_inner();
        b.pose = Pose::new(Vector3::zeros(), Rotation::from_wxyz(q.w, q.i, q.j, q.k).unwrap()).inverse();
        let out = fused(&[(a, 0.95), (b, 0.97)]);
        assert!(geodesic_deg(&out.camera_in_ship().rotation, &r) < 1e-9);
    }

    fn noisy_set(rng: &mut impl Rng) -> Vec<(PoseEstimate, f64)> {
        (0..6u8)
            .map(|i| {
                let c: f64 = rng.random_range(0.9..1.0);
                let s = 0.15 / c;
                let n = Normal::new(0.0, s).unwrap();
                let p = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
                let w: Vector3<f64> = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * 0.01);
                (est_at(p, crate::geometry::exp_map(&w), i), c)
            })
            .collect()
    }

    #[test]
    fn confidence_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let inputs = noisy_set(&mut rng);
            let scaled: Vec<_> = inputs.iter().map(|(e, c)| (e.clone(), c * 10.0)).collect();
            let a = fused(&inputs);
            let b = fused(&scaled);
            assert_eq!(a.class_ids, b.class_ids);
            assert!((a.pose.position - b.pose.position).norm() < 1e-12);
            assert!(geodesic_deg(&a.pose.rotation, &b.pose.rotation) < 1e-9);
        }
    }

    #[test]
    fn adding_the_fused_pose_does_not_move_it() {
        // Holds whenever the outlier test keeps the same parts; the new
        // estimate shifts the median, which can flip a borderline part.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut checked = 0;
        for _ in 0..200 {
            let mut inputs = noisy_set(&mut rng);
            let before = fused(&inputs);
            let mut same = before.clone();
            same.class_ids = vec![9];
            inputs.push((same, 0.93));
            let after = fused(&inputs);
            let kept: Vec<u8> = after.class_ids.iter().copied().filter(|c| *c != 9).collect();
            if kept != before.class_ids {
                continue;
            }
            checked += 1;
            let (a, b) = (after.camera_in_ship().position, before.camera_in_ship().position);
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
        assert!(checked >= 180, "{checked}");
    }

    #[test]
    fn weighted_median_cases() {
        assert_eq!(weighted_median(&[3.0, 1.0, 2.0], &[1.0, 1.0, 1.0]), 2.0);
        assert_eq!(weighted_median(&[1.0, 2.0], &[1.0, 1.0]), 1.5);
        assert_eq!(weighted_median(&[1.0, 2.0, 10.0], &[1.0, 5.0, 1.0]), 2.0);
    }

    #[test]
    fn fusion_beats_most_confident_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let trials = 1000;
        let mut wins = 0;
        for _ in 0..trials {
            let inputs = noisy_set(&mut rng);
            let out = fused(&inputs);
            let best = inputs
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            let e_fused = out.camera_in_ship().position.norm();
            let e_best = best.0.camera_in_ship().position.norm();
            if e_fused <= e_best {
                wins += 1;
            }
        }
        assert!(wins as f64 >= 0.9 * trials as f64, "{wins}/{trials}");
    }
}
