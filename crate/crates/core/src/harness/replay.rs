use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::ScenarioConfig;
use super::logs::*;
use super::metrics::{compute_metrics, MetricsReport};
use super::run::{load_ship, vision_outcome};
use super::HarnessError;
use crate::posepipe::{estimate_from_frame, Detector};
use crate::splat::Frame;

#[derive(Debug, Clone)]
pub struct ReplaySummary {
    pub metrics: MetricsReport,
    pub vision_log: PathBuf,
    pub frames: usize,
    pub detector_errors: usize,
}

/// Runs `detector` and the pose pipeline over a run's dumped frames, without
/// dynamics, and writes the resulting vision log into `out_dir`.
pub fn replay_offline(run_dir: &Path, detector: &dyn Detector, out_dir: &Path) -> Result<ReplaySummary, HarnessError> {
    let snapshot = run_dir.join(CONFIG_SNAPSHOT);
    let text = std::fs::read_to_string(&snapshot).map_err(|e| HarnessError::io(&snapshot, e))?;
    let cfg = ScenarioConfig::from_toml(&text)?;
    let frames_dir = run_dir.join(FRAMES_DIR);
    let sidecar = frames_dir.join(FRAMES_SIDECAR);
    if !sidecar.is_file() {
        return Err(HarnessError::Log(format!("missing frame sidecar {}", sidecar.display())));
    }
    let rows = read_frames(&sidecar)?;
    let pngs = std::fs::read_dir(&frames_dir)
        .map_err(|e| HarnessError::io(&frames_dir, e))?
        .filter_map(Result::ok)
        .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
        .count();
    if pngs != rows.len() {
        return Err(HarnessError::Log(format!("{pngs} frame images but {} sidecar rows", rows.len())));
    }
    let truth = read_truth(&run_dir.join(TRUTH_FILE))?;
    let half_period = 0.5 / cfg.rates.pose_stream_hz as f64 + 1e-9;
    for r in &rows {
        let i = truth.partition_point(|tr| tr.t < r.t);
        let near = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| truth.get(j))
            .any(|tr| (tr.t - r.t).abs() <= half_period);
        if !near {
            return Err(HarnessError::Log(format!("frame {} at t={} has no truth sample", r.index, r.t)));
        }
    }

    let ship = load_ship(&cfg)?;
    let rig = cfg.camera.rig();
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let vision_path = out_dir.join(VISION_FILE);
    let file = std::fs::File::create(&vision_path).map_err(|e| HarnessError::io(&vision_path, e))?;
    let io = |e| HarnessError::io(&vision_path, e);
    let mut log = VisionLogWriter::new(std::io::BufWriter::new(file)).map_err(io)?;
    let mut vision = Vec::with_capacity(rows.len());
    let mut detector_errors = 0;
    for r in &rows {
        let frame = Frame::load_png(frames_dir.join(frame_file_name(r.index)), r.t, r.camera_pose)?;
        let row = match estimate_from_frame(&frame, detector, &ship, &rig.intrinsics, &cfg.vision.fusion) {
            Ok(fe) => vision_outcome(&fe, &cfg, &rig).0,
            Err(e) => {
                detector_errors += 1;
                log::warn!("replay frame {}: {e}", r.index);
                VisionRow { t: r.t, fix: None }
            }
        };
        log.write(&row).map_err(io)?;
        vision.push(row);
    }
    log.into_inner().flush().map_err(io)?;

    let metrics = compute_metrics(&truth, &vision, &cfg.ship_pose().position)?;
    Ok(ReplaySummary {
        metrics,
        vision_log: vision_path,
        frames: rows.len(),
        detector_errors,
    })
}
