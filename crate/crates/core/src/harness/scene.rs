use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Pose, Rotation};
use crate::posepipe::ShipModel;
use crate::splat::{sh::sh_from_rgb, Gaussian, SceneModel, SceneSource, SplatError};

/// Share of Gaussians spent on the sea surface.
const SEA_FRACTION: f64 = 0.2;
const SEA_LEVEL: f64 = -2.0;

const PALETTE: [[f64; 3]; 6] = [
    [0.45, 0.47, 0.50],
    [0.30, 0.32, 0.33],
    [0.70, 0.72, 0.74],
    [0.80, 0.80, 0.78],
    [0.20, 0.20, 0.22],
    [0.55, 0.57, 0.60],
];

/// Builds a ship-like scene: small surface splats over each part's bounding
/// box, placed by `ship_pose`, plus a flat sea. Deterministic in `seed`.
pub fn synthetic_ship_scene(
    models: &ShipModel,
    ship_pose: &Pose,
    count: usize,
    seed: u64,
) -> Result<SceneModel, SplatError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes: Vec<(Vector3<f64>, Vector3<f64>)> = models
        .classes
        .iter()
        .filter(|c| c.keypoint_count() > 0)
        .map(|c| {
            let mut lo = Vector3::repeat(f64::INFINITY);
            let mut hi = Vector3::repeat(f64::NEG_INFINITY);
            for i in 0..c.keypoint_count() {
                lo = lo.inf(&c.point(i));
                hi = hi.sup(&c.point(i));
            }
            (lo, hi)
        })
        .collect();
    let sea = if boxes.is_empty() { count } else { ((count as f64) * SEA_FRACTION).round() as usize };
    let hull = count - sea;

    let areas: Vec<f64> = boxes
        .iter()
        .map(|(lo, hi)| {
            let d = hi - lo;
            2.0 * (d.x * d.y + d.y * d.z + d.x * d.z)
        })
        .collect();
    let total: f64 = areas.iter().sum();

    let mut gaussians = Vec::with_capacity(count);
    let mut placed = 0;
    for (k, ((lo, hi), area)) in boxes.iter().zip(&areas).enumerate() {
        let n = if k + 1 == boxes.len() {
            hull - placed
        } else {
            ((hull as f64) * area / total).round() as usize
        };
        placed += n;
        let d = hi - lo;
        let faces = [d.y * d.z, d.y * d.z, d.x * d.z, d.x * d.z, d.x * d.y, d.x * d.y];
        let face_total: f64 = faces.iter().sum();
        for _ in 0..n {
            let mut pick = rng.random::<f64>() * face_total;
            let mut f = 0;
            while f < 5 && pick > faces[f] {
                pick -= faces[f];
                f += 1;
            }
            let axis = f / 2;
            let mut p = Vector3::from_fn(|i, _| lo[i] + rng.random::<f64>() * d[i]);
            p[axis] = if f % 2 == 0 { lo[axis] } else { hi[axis] };
            let mut scale = Vector3::repeat(rng.random_range(0.06..0.14));
            scale[axis] = 0.01;
            let shade = rng.random_range(-0.05..0.05);
            let base = PALETTE[k % PALETTE.len()];
            let rgb = base.map(|c: f64| (c + shade).clamp(0.0, 1.0));
            gaussians.push(Gaussian {
                position: ship_pose.transform_point(&p),
                scale,
                orientation: ship_pose.rotation,
                opacity: rng.random_range(0.6..0.95),
                sh: sh_from_rgb(rgb),
            });
        }
    }

    let (sx, sy) = (70.0, 50.0);
    let centre = ship_pose.transform_point(&Vector3::new(6.0, 0.0, SEA_LEVEL));
    for _ in 0..sea {
        let p = centre + Vector3::new((rng.random::<f64>() - 0.5) * sx, (rng.random::<f64>() - 0.5) * sy, 0.0);
        let shade = rng.random_range(-0.04..0.04);
        gaussians.push(Gaussian {
            position: p,
            scale: Vector3::new(rng.random_range(0.5..0.9), rng.random_range(0.5..0.9), 0.02),
            orientation: Rotation::rot_z(rng.random_range(0.0..std::f64::consts::PI)),
            opacity: 0.9,
            sh: sh_from_rgb([0.10 + shade, 0.22 + shade, 0.36 + shade]),
        });
    }
    SceneModel::new(
        gaussians,
        SceneSource::Synthetic(format!("ship scene, {count} Gaussians, seed {seed}")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_count_and_deterministic() {
        let ship = ShipModel::default_ship();
        let a = synthetic_ship_scene(&ship, &Pose::identity(), 5000, 3).unwrap();
        let b = synthetic_ship_scene(&ship, &Pose::identity(), 5000, 3).unwrap();
        assert_eq!(a.len(), 5000);
        assert_eq!(a.gaussians(), b.gaussians());
        assert!(a.gaussians().iter().all(|g| g.is_valid()));
    }

    #[test]
    fn hull_splats_lie_on_part_boxes() {
        let ship = ShipModel::default_ship();
        let shift = Pose::from_translation(Vector3::new(100.0, 0.0, 0.0));
        let s = synthetic_ship_scene(&ship, &shift, 2000, 1).unwrap();
        let hull = s.gaussians().iter().filter(|g| g.position.z > SEA_LEVEL + 0.1);
        for g in hull {
            assert!(g.position.x >= 100.0 - 7.0 - 1e-9 && g.position.x <= 100.0 + 22.0 + 1e-9);
        }
    }
}
