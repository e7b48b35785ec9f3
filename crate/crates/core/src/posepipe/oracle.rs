use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Detector, KeypointObservation, PoseError, ShipModel};
use crate::geometry::Pose;
use crate::splat::{Frame, Intrinsics};

/// Points closer than this to the camera are treated as not visible, metres.
const NEAR_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleNoise {
    /// Standard deviation of the pixel noise.
    pub pixel_sigma: f64,
    /// Probability that a whole part goes undetected.
    pub dropout_prob: f64,
    /// Confidence lost when no keypoint is visible, scaled by the hidden fraction.
    pub visibility_penalty: f64,
    /// Confidence lost per pixel of noise sigma.
    pub noise_penalty: f64,
    pub seed: u64,
}

impl Default for OracleNoise {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.0,
            dropout_prob: 0.0,
            visibility_penalty: 0.5,
            noise_penalty: 0.01,
            seed: 0,
        }
    }
}

/// Stand-in for a learned keypoint detector: projects the model through the
/// true camera pose carried by the frame, then corrupts the result.
///
/// The random stream is derived from the seed and the frame timestamp, so the
/// same frame always yields the same observations.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    pub models: ShipModel,
    pub intrinsics: Intrinsics,
    /// Ship pose in the world frame.
    pub ship_pose: Pose,
    pub noise: OracleNoise,
}

impl OracleDetector {
    pub fn new(models: ShipModel, intrinsics: Intrinsics, noise: OracleNoise) -> Self {
        Self {
            models,
            intrinsics,
            ship_pose: Pose::identity(),
            noise,
        }
    }

    /// Observations for a camera at `camera_in_ship`.
    pub fn observe(&self, camera_in_ship: &Pose, timestamp: f64) -> Vec<KeypointObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.noise.seed, timestamp.to_bits()));
        let ship_to_cam = camera_in_ship.inverse();
        let sigma = self.noise.pixel_sigma.max(0.0);
        let mut out = Vec::new();
        for class in &self.models.classes {
            let dropped = rng.random::<f64>() < self.noise.dropout_prob;
            let k = class.keypoint_count();
            let mut keypoints = Vec::with_capacity(k);
            let mut visible = Vec::with_capacity(k);
            for i in 0..k {
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                let p = ship_to_cam.transform_point(&class.point(i));
                let px = (p.z > NEAR_LIMIT)
                    .then(|| self.intrinsics.project(&p))
                    .flatten()
                    .map(|px| px + Vector2::new(nx, ny) * sigma)
                    .filter(|px| self.intrinsics.contains(px));
                visible.push(px.is_some());
                keypoints.push(px.unwrap_or_else(Vector2::zeros));
            }
            let seen = visible.iter().filter(|v| **v).count();
            if dropped || seen == 0 {
                continue;
            }
            let hidden = 1.0 - seen as f64 / k as f64;
            let confidence = (1.0
                - self.noise.visibility_penalty * hidden
                - self.noise.noise_penalty * sigma)
                .clamp(0.0, 1.0);
            out.push(KeypointObservation {
                class_id: class.class_id,
                confidence,
                keypoints,
                visible,
            });
        }
        out
    }
}

impl Detector for OracleDetector {
    fn detect(&self, frame: &Frame) -> Result<Vec<KeypointObservation>, PoseError> {
        let camera_in_ship = self.ship_pose.inverse().compose(&frame.camera_pose);
        Ok(self.observe(&camera_in_ship, frame.timestamp))
    }
}

/// SplitMix64 finalizer over the combined inputs.
fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.rotate_left(32) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use crate::splat::forward_camera_mount;
    use nalgebra::Vector3;

    /// Camera 12 m astern of the deck centre, 4 m up, looking forward.
    pub(crate) fn astern_camera() -> Pose {
        let body = Pose::new(Vector3::new(-12.0, 0.0, 4.0), Rotation::identity());
        body.compose(&forward_camera_mount(0.25))
    }

    fn detector(noise: OracleNoise) -> OracleDetector {
        OracleDetector::new(ShipModel::default_ship(), Intrinsics::default(), noise)
    }

    #[test]
    fn noise_free_projection() {
        let det = detector(OracleNoise::default());
        let cam = astern_camera();
        let obs = det.observe(&cam, 0.0);
        assert!(!obs.is_empty());
        let to_cam = cam.inverse();
        for o in &obs {
            let model = det.models.class(o.class_id).unwrap();
            let all = o.visible_count() == model.keypoint_count();
            assert_eq!(o.confidence == 1.0, all);
            for (i, (k, v)) in o.keypoints.iter().zip(&o.visible).enumerate() {
                if *v {
                    let exact = det.intrinsics.project(&to_cam.transform_point(&model.point(i))).unwrap();
                    assert!((k - exact).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn looking_away_sees_nothing() {
        let det = detector(OracleNoise::default());
        let body = Pose::new(Vector3::new(-12.0, 0.0, 4.0), Rotation::rot_z(std::f64::consts::PI));
        let cam = body.compose(&forward_camera_mount(0.0));
        assert!(det.observe(&cam, 0.0).is_empty());
    }

    #[test]
    fn seeded_calls_repeat() {
        let det = detector(OracleNoise {
            pixel_sigma: 2.0,
            dropout_prob: 0.3,
            seed: 99,
            ..Default::default()
        });
        let cam = astern_camera();
        assert_eq!(det.observe(&cam, 1.5), det.observe(&cam, 1.5));
        let frame = Frame::new(1, 1, vec![0; 3], 1.5, cam);
        assert_eq!(det.detect(&frame).unwrap(), det.observe(&cam, 1.5));
    }

    #[test]
    fn dropout_one_drops_everything() {
        let det = detector(OracleNoise {
            dropout_prob: 1.0,
            ..Default::default()
        });
        assert!(det.observe(&astern_camera(), 0.0).is_empty());
    }

    #[test]
    fn noise_lowers_confidence() {
        let det = detector(OracleNoise {
            pixel_sigma: 2.0,
            ..Default::default()
        });
        for o in det.observe(&astern_camera(), 0.0) {
            assert!(o.confidence <= 0.98 + 1e-12);
            assert!(o.keypoints.iter().zip(&o.visible).all(|(k, v)| !v || det.intrinsics.contains(k)));
        }
    }
}
