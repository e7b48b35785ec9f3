use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::SplatError;
use crate::geometry::{Pose, Rotation};

/// Pinhole intrinsics in pixels. Pixel centres sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Intrinsics {
    /// 640x640 with a ~57 degree field of view.
    fn default() -> Self {
        Self {
            width: 640,
            height: 640,
            fx: 580.0,
            fy: 580.0,
            cx: 320.0,
            cy: 320.0,
        }
    }
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), SplatError> {
        let ok = self.width > 0
            && self.height > 0
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(SplatError::InvalidCamera(format!("{self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point; `None` at or behind the image plane.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

/// Intrinsics plus camera-to-world pose. Optical axis +z, image x right,
/// image y down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self, SplatError> {
        intrinsics.validate()?;
        Ok(Self { intrinsics, pose })
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.inverse_transform_point(p)
    }
}

/// Rotation taking camera axes (x right, y down, z forward) into vehicle body
/// axes (x forward, y left, z up), with the camera pitched down by
/// `pitch_down` radians about the body y axis. This is the one place the
/// renderer's optical convention meets the vehicle's z-up convention.
pub fn forward_camera_mount(pitch_down: f64) -> Pose {
    // Columns: camera x, y, z expressed in body axes.
    let level = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let rot = Rotation::rot_y(pitch_down) * Rotation::from_matrix(&level);
    Pose::new(Vector3::zeros(), rot)
}

/// Intrinsics and camera-to-body extrinsic of the vehicle camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    pub intrinsics: Intrinsics,
    pub extrinsic: Pose,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::default(),
            extrinsic: forward_camera_mount(0.0),
        }
    }
}

impl CameraRig {
    pub fn camera_pose(&self, body_pose: &Pose) -> Pose {
        body_pose.compose(&self.extrinsic)
    }

    pub fn body_pose(&self, camera_pose: &Pose) -> Pose {
        camera_pose.compose(&self.extrinsic.inverse())
    }
}
