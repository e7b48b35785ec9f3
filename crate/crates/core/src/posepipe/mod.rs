//! Camera frame to ship-relative camera pose: keypoint detection, per-part
//! EPnP, then confidence-weighted fusion across parts.

mod epnp;
mod fusion;
mod model;
mod oracle;
mod pipeline;
mod remote;

use nalgebra::{Matrix3, Vector2};
use thiserror::Error;

use crate::geometry::Pose;
use crate::splat::Frame;

pub use epnp::{epnp_solve, reprojection_rms, Correspondence, PnpSolution, BEHIND_CAMERA_PENALTY};
pub use fusion::{fuse_poses, FusionConfig, FusionOutcome};
pub use model::{ObjectModel, ShipModel, MAX_CLASSES};
pub use oracle::{OracleDetector, OracleNoise};
pub use pipeline::{estimate_from_frame, ClassEstimate, FrameEstimate, PoseLogWriter, StageTimings};
pub use remote::{RemoteDetector, DEFAULT_DETECT_TIMEOUT};

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientPoints(usize),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("invalid ship model: {0}")]
    InvalidModel(String),
    #[error("io: {0}")]
    Io(String),
    #[error("detector protocol: {0}")]
    Protocol(String),
}

/// Detected keypoints of one ship part. `keypoints[i]` pairs with
/// `model_points[i]` of the class; entries with `visible[i] == false` carry no
/// information.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointObservation {
    pub class_id: u8,
    pub confidence: f64,
    pub keypoints: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
}

impl KeypointObservation {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Pairs visible keypoints with their model points.
    pub fn correspondences(&self, model: &ObjectModel) -> Vec<Correspondence> {
        self.keypoints
            .iter()
            .zip(&self.visible)
            .enumerate()
            .filter(|(i, (_, v))| **v && *i < model.keypoint_count())
            .map(|(i, (k, _))| Correspondence::new(model.point(i), *k))
            .collect()
    }
}

/// A ship-relative pose estimate. `pose` maps ship-frame points into the
/// camera frame; `camera_in_ship` gives the camera's pose in the ship frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Camera position covariance, m^2.
    pub position_cov: Matrix3<f64>,
    pub rotation_conf: f64,
    pub class_ids: Vec<u8>,
    /// Pixels.
    pub reprojection_rms: f64,
}

impl PoseEstimate {
    pub fn camera_in_ship(&self) -> Pose {
        self.pose.inverse()
    }

    pub fn position_sigma(&self) -> f64 {
        (self.position_cov.trace() / 3.0).max(0.0).sqrt()
    }
}

/// Source of keypoint observations for a frame. Calls must not depend on
/// earlier calls.
pub trait Detector: Send + Sync {
    fn detect(&self, frame: &Frame) -> Result<Vec<KeypointObservation>, PoseError>;
}
