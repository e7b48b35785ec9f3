use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::estimator::EstimatorConfig;
use crate::geometry::{Pose, Rotation};
use crate::posepipe::{FusionConfig, OracleNoise};
use crate::splat::{forward_camera_mount, CameraRig, Intrinsics, RenderOptions};
use crate::vehicle::{ImuNoise, TrajectorySpec, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControlSource {
    #[default]
    Truth,
    Vision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneConfig {
    /// Gaussians scattered over the ship model's part boxes and the sea.
    Synthetic {
        gaussians: usize,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub intrinsics: Intrinsics,
    /// Downward tilt of the forward-looking camera.
    pub pitch_down_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::default(),
            pitch_down_deg: 14.0,
        }
    }
}

impl CameraConfig {
    pub fn rig(&self) -> CameraRig {
        CameraRig {
            intrinsics: self.intrinsics,
            extrinsic: forward_camera_mount(self.pitch_down_deg.to_radians()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rates {
    pub dynamics_hz: u32,
    pub pose_stream_hz: u32,
    pub vision_hz: u32,
    /// Vision frames written to disk per second; 0 disables the dump.
    pub frame_log_fps: u32,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            dynamics_hz: 1000,
            pose_stream_hz: 200,
            vision_hz: 10,
            frame_log_fps: 10,
        }
    }
}

fn default_timeout_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorConfig {
    Oracle(OracleNoise),
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        /// Send PNG instead of raw RGB.
        #[serde(default)]
        png: bool,
    },
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::Oracle(OracleNoise::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    /// Seconds from capture to delivery.
    pub latency: f64,
    /// Attitude sigma of a fix with unit rotation confidence.
    pub rotation_sigma_deg: f64,
    pub fusion: FusionConfig,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            latency: 0.1,
            rotation_sigma_deg: 1.0,
            fusion: FusionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuConfig {
    pub noise: ImuNoise,
    pub seed: u64,
}

impl Default for ImuConfig {
    fn default() -> Self {
        Self {
            noise: ImuNoise::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub tile_size: u32,
    pub background: [f64; 3],
    pub threads: Option<usize>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        let o = RenderOptions::default();
        Self {
            tile_size: o.tile_size,
            background: [0.62, 0.72, 0.85],
            threads: None,
        }
    }
}

impl RenderConfig {
    pub fn options(&self) -> RenderOptions {
        RenderOptions {
            tile_size: self.tile_size,
            background: self.background,
            threads: self.threads,
            ..RenderOptions::default()
        }
    }
}

/// Everything one simulated flight needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Seconds of simulated time.
    pub duration: f64,
    #[serde(default)]
    pub control_source: ControlSource,
    /// Ship part models (JSON); the built-in ship when absent.
    #[serde(default)]
    pub ship_model: Option<PathBuf>,
    /// Ship origin in the world frame, metres.
    #[serde(default)]
    pub ship_position: [f64; 3],
    /// Ship heading, degrees.
    #[serde(default)]
    pub ship_yaw_deg: f64,
    /// Optional UDP target for the truth pose stream.
    #[serde(default)]
    pub pose_stream_target: Option<String>,
    pub scene: SceneConfig,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub vision: VisionConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub imu: ImuConfig,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub render: RenderConfig,
    pub trajectory: TrajectorySpec,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates; relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let SceneConfig::File { path: p } = &mut cfg.scene {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut cfg.ship_model {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn ship_pose(&self) -> Pose {
        Pose::new(self.ship_position.into(), Rotation::rot_z(self.ship_yaw_deg.to_radians()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        let r = &self.rates;
        if r.dynamics_hz == 0 || r.pose_stream_hz == 0 || r.vision_hz == 0 {
            return bad("rates must be positive".into());
        }
        if r.vision_hz > r.pose_stream_hz {
            return bad("vision rate cannot exceed the pose stream rate".into());
        }
        if r.dynamics_hz % r.pose_stream_hz != 0 || r.dynamics_hz % r.vision_hz != 0 {
            return bad("dynamics rate must be a multiple of the pose stream and vision rates".into());
        }
        if r.dynamics_hz < 100 {
            return bad("dynamics rate must be at least 100 Hz".into());
        }
        if r.frame_log_fps > 60 {
            return bad("frame log rate is capped at 60 fps".into());
        }
        if !(self.vision.latency >= 0.0 && self.vision.latency <= self.estimator.buffer_window) {
            return bad(format!(
                "latency {} must lie in [0, buffer window {}]",
                self.vision.latency, self.estimator.buffer_window
            ));
        }
        if !(self.vision.rotation_sigma_deg > 0.0) {
            return bad("rotation sigma must be positive".into());
        }
        if let SceneConfig::Synthetic { gaussians, .. } = self.scene {
            if gaussians == 0 {
                return bad("synthetic scene needs at least one Gaussian".into());
            }
        }
        if let DetectorConfig::Oracle(n) = &self.detector {
            if !(n.pixel_sigma >= 0.0) || !(0.0..=1.0).contains(&n.dropout_prob) {
                return bad("oracle noise out of range".into());
            }
        }
        if self.render.tile_size == 0 {
            return bad("tile size must be positive".into());
        }
        self.camera
            .intrinsics
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.vehicle
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.estimator
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        crate::vehicle::ReferenceTrajectory::from_spec(&self.trajectory)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}
