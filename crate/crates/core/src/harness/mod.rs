//! Scenario configuration, the closed simulation loop, metrics, offline
//! replay and run reports.

mod config;
mod logs;
mod metrics;
mod montecarlo;
mod replay;
mod report;
mod run;
mod scene;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::estimator::EstimatorError;
use crate::posepipe::PoseError;
use crate::splat::SplatError;
use crate::vehicle::VehicleError;

pub use config::{
    CameraConfig, ControlSource, DetectorConfig, ImuConfig, Rates, RenderConfig, ScenarioConfig, SceneConfig,
    VisionConfig,
};
pub use logs::{
    frame_file_name, read_estimate, read_frames, read_truth, read_vision, write_frame_row, EstimateRow, FrameRow,
    TruthRow, VisionFix, VisionLogWriter, VisionRow, CONFIG_SNAPSHOT, ESTIMATE_FILE, FRAMES_DIR, FRAMES_HEADER,
    FRAMES_SIDECAR, REPORT_FILE, STATUS_FILE, TRUTH_FILE, VISION_FILE,
};
pub use metrics::{compute_metrics, mae_over_range_pct, MetricsReport};
pub use montecarlo::{nees_monte_carlo, NeesRun, NeesStudy};
pub use replay::{replay_offline, ReplaySummary};
pub use report::{report, ReportSummary, BAND_FILE};
pub use run::{build_detector, load_scene_for, load_ship, run_scenario, RunSummary};
pub use scene::synthetic_ship_scene;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("scene: {0}")]
    Scene(#[from] SplatError),
    #[error("ship model: {0}")]
    Model(#[from] PoseError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vehicle: {0}")]
    Vehicle(#[from] VehicleError),
    #[error("estimator: {0}")]
    Estimator(#[from] EstimatorError),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("log: {0}")]
    Log(String),
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 for configuration problems, 2 for runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            _ => 2,
        }
    }
}
