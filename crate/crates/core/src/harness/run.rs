use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::config::{ControlSource, DetectorConfig, ScenarioConfig, SceneConfig};
use super::logs::*;
use super::scene::synthetic_ship_scene;
use super::{report, HarnessError, MetricsReport};
use crate::estimator::{DelayedEskf, EstimateLogWriter, EstimatorStats, FilterState, PoseMeasurement};
use crate::geometry::{Pose, Rotation, StateVector};
use crate::netlink::{PixelFormat, PoseStreamSender};
use crate::posepipe::{
    estimate_from_frame, Detector, FrameEstimate, OracleDetector, RemoteDetector, ShipModel,
};
use crate::splat::{load_scene, render_at, CameraRig, Frame, SceneModel};
use crate::vehicle::{
    dynamics_step, geometric_control, state_derivative, ImuModel, ReferenceTrajectory, TruthLogWriter,
};

/// Outcome of one simulated flight.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub metrics: Option<MetricsReport>,
    /// The estimator went longer than its outage limit without a fix.
    pub degraded: bool,
    pub clamped_steps: u64,
    pub clamped_intervals: u64,
    pub estimator: EstimatorStats,
    pub vision_frames: usize,
    pub frames_written: usize,
    pub detector_errors: usize,
    pub final_truth: StateVector,
    pub final_estimate: FilterState,
    /// Wall-clock time; never written to the run directory.
    pub wall_time: Duration,
}

impl RunSummary {
    /// 0 for a clean run, 3 when the run completed degraded.
    pub fn exit_code(&self) -> i32 {
        if self.degraded {
            3
        } else {
            0
        }
    }
}

pub fn load_ship(cfg: &ScenarioConfig) -> Result<ShipModel, HarnessError> {
    match &cfg.ship_model {
        Some(p) => Ok(ShipModel::load(p)?),
        None => Ok(ShipModel::default_ship()),
    }
}

pub fn load_scene_for(cfg: &ScenarioConfig, ship: &ShipModel) -> Result<SceneModel, HarnessError> {
    match &cfg.scene {
        SceneConfig::Synthetic { gaussians, seed } => {
            Ok(synthetic_ship_scene(ship, &cfg.ship_pose(), *gaussians, *seed)?)
        }
        SceneConfig::File { path } => Ok(load_scene(path)?),
    }
}

pub fn build_detector(cfg: &ScenarioConfig, ship: &ShipModel) -> Result<Box<dyn Detector>, HarnessError> {
    match &cfg.detector {
        DetectorConfig::Oracle(noise) => {
            let mut d = OracleDetector::new(ship.clone(), cfg.camera.intrinsics, *noise);
            d.ship_pose = cfg.ship_pose();
            Ok(Box::new(d))
        }
        DetectorConfig::Remote { endpoint, timeout_ms, png } => {
            let d = RemoteDetector::connect(endpoint.as_str(), Duration::from_millis(*timeout_ms))
                .map_err(|e| HarnessError::Config(format!("detector endpoint {endpoint}: {e}")))?;
            let format = if *png { PixelFormat::Png } else { PixelFormat::RawRgb8 };
            Ok(Box::new(d.with_format(format)))
        }
    }
}

/// Rotation rebuilt from its logged components, so a frame read back from
/// the sidecar carries exactly the same pose.
pub(crate) fn log_stable(p: &Pose) -> Pose {
    let [w, x, y, z] = p.rotation.wxyz();
    Pose::new(p.position, Rotation::from_wxyz(w, x, y, z).unwrap_or(p.rotation))
}

/// Turns a pipeline result into a logged row and, for fixes, a measurement
/// of the vehicle body pose in the world frame.
pub(crate) fn vision_outcome(
    fe: &FrameEstimate,
    cfg: &ScenarioConfig,
    rig: &CameraRig,
) -> (VisionRow, Option<PoseMeasurement>) {
    let Some(est) = fe.outcome.fix() else {
        return (VisionRow { t: fe.timestamp, fix: None }, None);
    };
    let ship = cfg.ship_pose();
    let cam_world = ship.compose(&est.camera_in_ship());
    let body = rig.body_pose(&cam_world);
    let rs = ship.rotation.matrix();
    let cov = rs * est.position_cov * rs.transpose();
    let rot_sigma = cfg.vision.rotation_sigma_deg.to_radians() / est.rotation_conf.max(1e-3);
    let row = VisionRow {
        t: fe.timestamp,
        fix: Some(VisionFix {
            pose: body,
            n_classes: est.class_ids.len(),
            pos_sigma: est.position_sigma(),
            rot_sigma_deg: rot_sigma.to_degrees(),
            reproj_rms: est.reprojection_rms,
        }),
    };
    let meas = PoseMeasurement {
        pose: body,
        position_cov: cov,
        rotation_sigma: rot_sigma,
        capture_timestamp: fe.timestamp,
        arrival_timestamp: fe.timestamp + cfg.vision.latency,
    };
    (row, Some(meas))
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| HarnessError::io(path, e))?))
}

fn write_status(dir: &Path, lines: &[(String, String)]) -> Result<(), HarnessError> {
    let path = dir.join(STATUS_FILE);
    let text: String = lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
}

/// Runs the closed loop and fills `run_dir`. Outputs depend only on the
/// config, so repeated runs are byte-identical.
pub fn run_scenario(cfg: &ScenarioConfig, run_dir: &Path) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(run_dir).map_err(|e| HarnessError::io(run_dir, e))?;
    write_status(run_dir, &[("state".into(), "running".into())])?;
    let snap = run_dir.join(CONFIG_SNAPSHOT);
    std::fs::write(&snap, cfg.to_toml()).map_err(|e| HarnessError::io(&snap, e))?;

    let ship = load_ship(cfg)?;
    let scene = load_scene_for(cfg, &ship)?;
    let detector = build_detector(cfg, &ship)?;
    let rig = cfg.camera.rig();
    let render_opts = cfg.render.options();
    let trajectory = ReferenceTrajectory::from_spec(&cfg.trajectory)?;
    let params = &cfg.vehicle;

    let frames_dir = run_dir.join(FRAMES_DIR);
    let frame_stride = match cfg.rates.frame_log_fps {
        0 => None,
        fps => Some(cfg.rates.vision_hz.div_ceil(fps) as usize),
    };
    let mut sidecar = match frame_stride {
        Some(_) => {
            std::fs::create_dir_all(&frames_dir).map_err(|e| HarnessError::io(&frames_dir, e))?;
            let mut w = create(&frames_dir.join(FRAMES_SIDECAR))?;
            writeln!(w, "{FRAMES_HEADER}").map_err(|e| HarnessError::io(&frames_dir, e))?;
            Some(w)
        }
        None => None,
    };

    let io = |e: std::io::Error| HarnessError::io(run_dir, e);
    let mut truth_log = TruthLogWriter::new(create(&run_dir.join(TRUTH_FILE))?).map_err(io)?;
    let mut est_log = EstimateLogWriter::new(create(&run_dir.join(ESTIMATE_FILE))?).map_err(io)?;
    let mut vision_log = VisionLogWriter::new(create(&run_dir.join(VISION_FILE))?).map_err(io)?;
    let mut stream = match &cfg.pose_stream_target {
        Some(t) => Some(PoseStreamSender::new(t.as_str()).map_err(|e| HarnessError::Config(format!("pose stream target {t}: {e}")))?),
        None => None,
    };

    let hz = cfg.rates.dynamics_hz;
    let dt = 1.0 / hz as f64;
    let steps = (cfg.duration * hz as f64).round() as u64;
    let truth_every = (hz / cfg.rates.pose_stream_hz) as u64;
    let vision_every = (hz / cfg.rates.vision_hz) as u64;

    let r0 = trajectory.sample(0.0);
    let mut truth = StateVector::at_rest(Pose::new(r0.position, Rotation::rot_z(r0.yaw)), 0.0);
    let mut filter = DelayedEskf::new(FilterState::new(&truth, cfg.estimator.initial_cov()), cfg.estimator.clone())?;
    let mut imu = ImuModel::new(cfg.imu.noise, params.gravity, cfg.imu.seed);
    let mut pending: VecDeque<(f64, Option<PoseMeasurement>)> = VecDeque::new();

    let mut degraded = false;
    let mut clamped_steps = 0;
    let mut clamped_intervals = 0;
    let mut was_clamped = false;
    let mut vision_frames = 0usize;
    let mut frames_written = 0usize;
    let mut detector_errors = 0usize;

    for k in 0..=steps {
        let t = k as f64 / hz as f64;
        truth.timestamp = t;

        if k % vision_every == 0 {
            let mut frame: Frame = render_at(&scene, &truth.pose, &rig, &render_opts, t)?;
            frame.camera_pose = log_stable(&frame.camera_pose);
            let fe = match estimate_from_frame(&frame, detector.as_ref(), &ship, &rig.intrinsics, &cfg.vision.fusion) {
                Ok(fe) => Some(fe),
                Err(e) => {
                    detector_errors += 1;
                    log::warn!("pose pipeline failed at t={t:.3}: {e}");
                    None
                }
            };
            let (row, meas) = match &fe {
                Some(fe) => vision_outcome(fe, cfg, &rig),
                None => (VisionRow { t, fix: None }, None),
            };
            vision_log.write(&row).map_err(io)?;
            pending.push_back((t + cfg.vision.latency, meas));
            if let (Some(stride), Some(side)) = (frame_stride, sidecar.as_mut()) {
                if vision_frames % stride == 0 {
                    frame.save_png(frames_dir.join(frame_file_name(vision_frames)))?;
                    write_frame_row(
                        side,
                        &FrameRow {
                            index: vision_frames,
                            t,
                            camera_pose: frame.camera_pose,
                        },
                    )
                    .map_err(io)?;
                    frames_written += 1;
                }
            }
            vision_frames += 1;
        }

        while pending.front().is_some_and(|(arrive, _)| *arrive <= t + 1e-9) {
            let (_, meas) = pending.pop_front().expect("front checked");
            match meas {
                Some(m) => {
                    filter.update_delayed(m)?;
                }
                None => filter.handle_no_fix(),
            }
        }
        if filter.degraded() && !degraded {
            log::warn!("estimate degraded at t={t:.3}: no fix for {:.2} s", filter.outage());
            degraded = true;
        }

        if k % truth_every == 0 {
            truth_log.write(&truth).map_err(io)?;
            est_log.write(filter.state()).map_err(io)?;
            if let Some(s) = stream.as_mut() {
                if let Err(e) = s.send(&truth.pose, t, (k / truth_every) as u32) {
                    log::warn!("pose stream send failed: {e}");
                }
            }
        }

        if k == steps {
            break;
        }

        let reference = trajectory.sample(t);
        let input = match cfg.control_source {
            ControlSource::Truth => truth,
            ControlSource::Vision => filter.state_vector(),
        };
        let ctrl = geometric_control(&input, &reference, params);
        if ctrl.clamped {
            clamped_steps += 1;
            if !was_clamped {
                clamped_intervals += 1;
                log::warn!("thrust clamped at t={t:.3}");
            }
        }
        was_clamped = ctrl.clamped;
        let (accel, _) = state_derivative(&truth, &ctrl.command, params);
        let sample = imu.sample(&truth, &accel, dt);
        filter.propagate(&sample, dt)?;
        truth = dynamics_step(&truth, &ctrl.command, params, dt)?;
    }

    let flush = |w: &mut dyn Write| w.flush();
    let mut truth_out = truth_log.into_inner();
    let mut est_out = est_log.into_inner();
    let mut vis_out = vision_log.into_inner();
    flush(&mut truth_out).map_err(io)?;
    flush(&mut est_out).map_err(io)?;
    flush(&mut vis_out).map_err(io)?;
    if let Some(mut s) = sidecar {
        s.flush().map_err(io)?;
    }

    let stats = filter.stats;
    write_status(
        run_dir,
        &[
            ("state".into(), "complete".into()),
            ("degraded".into(), degraded.to_string()),
            ("clamped_steps".into(), clamped_steps.to_string()),
            ("clamped_intervals".into(), clamped_intervals.to_string()),
            ("vision_frames".into(), vision_frames.to_string()),
            ("detector_errors".into(), detector_errors.to_string()),
            ("fix_updates".into(), stats.updates.to_string()),
            ("dropped_stale".into(), stats.dropped_stale.to_string()),
            ("missed_fixes".into(), stats.missed_fixes.to_string()),
        ],
    )?;
    let summary = report(run_dir)?;

    Ok(RunSummary {
        run_dir: run_dir.to_path_buf(),
        metrics: summary.metrics,
        degraded,
        clamped_steps,
        clamped_intervals,
        estimator: stats,
        vision_frames,
        frames_written,
        detector_errors,
        final_truth: truth,
        final_estimate: *filter.state(),
        wall_time: started.elapsed(),
    })
}
