use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use nalgebra::Vector3;
use splatloop::harness::*;
use splatloop::netlink::{seconds_to_us, spawn_detect_server, DetectResponse};
use splatloop::posepipe::{OracleDetector, OracleNoise, ShipModel};
use splatloop::splat::Intrinsics;
use splatloop::vehicle::{ImuNoise, TrajectorySpec};

/// Small frames and a sparse scene keep debug-profile runs quick; the oracle
/// only needs the camera geometry.
fn base(name: &str, duration: f64, trajectory: TrajectorySpec) -> ScenarioConfig {
    let text = format!(
        "name = \"{name}\"\nduration = {duration:?}\n[scene]\nkind = \"synthetic\"\ngaussians = 1500\nseed = 2\n\
         [trajectory]\nkind = \"hover\"\nposition = [-6.0, 0.0, 3.0]\nduration = 1.0\n"
    );
    let mut cfg = ScenarioConfig::from_toml(&text).unwrap();
    cfg.trajectory = trajectory;
    cfg.camera.intrinsics = Intrinsics {
        width: 160,
        height: 160,
        fx: 145.0,
        fy: 145.0,
        cx: 80.0,
        cy: 80.0,
    };
    cfg
}

fn hover(duration: f64) -> ScenarioConfig {
    base(
        "hover",
        duration,
        TrajectorySpec::Hover {
            position: [-6.0, 0.0, 3.0],
            duration,
            yaw: 0.0,
        },
    )
}

fn short_zigzag() -> ScenarioConfig {
    let mut cfg = base(
        "zigzag",
        8.0,
        TrajectorySpec::Zigzag {
            deck: [-3.0, 0.0, 0.2],
            start: [-4.0, 0.0, 1.5],
            advance: [-0.5, 0.0, 0.2],
            swing: [0.0, -1.0, 0.0],
            legs: 1,
            speed: 1.0,
            blend: 0.5,
            hold: 0.5,
            yaw: 0.0,
        },
    );
    cfg.control_source = ControlSource::Vision;
    cfg.detector = DetectorConfig::Oracle(OracleNoise {
        pixel_sigma: 2.0,
        dropout_prob: 0.05,
        seed: 5,
        ..OracleNoise::default()
    });
    cfg
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn noise_free_hover_holds_position() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_scenario(&hover(10.0), dir.path()).unwrap();
    let err = (s.final_truth.pose.position - Vector3::new(-6.0, 0.0, 3.0)).norm();
    assert!(err < 1e-3, "hover error {err} m");
    assert_eq!(s.exit_code(), 0);
    for f in [TRUTH_FILE, ESTIMATE_FILE, VISION_FILE, CONFIG_SNAPSHOT, REPORT_FILE] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_dir(dir.path().join(FRAMES_DIR)).unwrap().count(), 101 + 1);
}

#[test]
fn zero_duration_is_a_config_error() {
    let mut cfg = hover(1.0);
    cfg.duration = 0.0;
    let dir = tempfile::tempdir().unwrap();
    let err = run_scenario(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn same_config_gives_identical_outputs() {
    let cfg = short_zigzag();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(&cfg, a.path()).unwrap();
    run_scenario(&cfg, b.path()).unwrap();
    for f in [TRUTH_FILE, ESTIMATE_FILE, VISION_FILE, CONFIG_SNAPSHOT, REPORT_FILE, "band.csv"] {
        assert!(read(&a.path().join(f)) == read(&b.path().join(f)), "{f} differs");
    }
    let frames = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d.join(FRAMES_DIR))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        v.sort();
        v.iter().map(|p| read(p)).collect::<Vec<_>>()
    };
    assert!(frames(a.path()) == frames(b.path()));
}

#[test]
fn control_source_only_rewires_the_controller() {
    let mut cfg = hover(10.0);
    cfg.vision.latency = 0.0;
    cfg.imu.noise = ImuNoise::zero();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let truth = run_scenario(&cfg, a.path()).unwrap();
    cfg.control_source = ControlSource::Vision;
    let vision = run_scenario(&cfg, b.path()).unwrap();
    let d = (truth.final_truth.pose.position - vision.final_truth.pose.position).norm();
    assert!(d < 1e-6, "truth vs vision control differ by {d} m");
}

#[test]
fn replay_reproduces_the_live_vision_log() {
    let cfg = short_zigzag();
    let run = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let live = run_scenario(&cfg, run.path()).unwrap();
    let ship = ShipModel::default_ship();
    let DetectorConfig::Oracle(noise) = cfg.detector.clone() else { unreachable!() };
    let mut det = OracleDetector::new(ship, cfg.camera.intrinsics, noise);
    det.ship_pose = cfg.ship_pose();
    let replay = replay_offline(run.path(), &det, out.path()).unwrap();
    assert_eq!(replay.frames, live.vision_frames);
    assert!(read(&run.path().join(VISION_FILE)) == read(&out.path().join(VISION_FILE)));
    assert_eq!(Some(replay.metrics), live.metrics);
}

#[test]
fn replay_requires_the_sidecar() {
    let run = tempfile::tempdir().unwrap();
    run_scenario(&hover(0.5), run.path()).unwrap();
    std::fs::remove_file(run.path().join(FRAMES_DIR).join(FRAMES_SIDECAR)).unwrap();
    let det = OracleDetector::new(ShipModel::default_ship(), Intrinsics::default(), OracleNoise::default());
    let out = tempfile::tempdir().unwrap();
    assert!(replay_offline(run.path(), &det, out.path()).is_err());
}

#[test]
fn replay_rejects_missing_frames() {
    let run = tempfile::tempdir().unwrap();
    let cfg = hover(0.5);
    run_scenario(&cfg, run.path()).unwrap();
    std::fs::remove_file(run.path().join(FRAMES_DIR).join(frame_file_name(2))).unwrap();
    let det = OracleDetector::new(ShipModel::default_ship(), cfg.camera.intrinsics, OracleNoise::default());
    let out = tempfile::tempdir().unwrap();
    assert!(matches!(replay_offline(run.path(), &det, out.path()), Err(HarnessError::Log(_))));
}

#[test]
fn replay_through_a_flaky_remote_detector() {
    let cfg = hover(3.0);
    let run = tempfile::tempdir().unwrap();
    run_scenario(&cfg, run.path()).unwrap();

    // The wire carries no pose, so the server looks it up by capture time.
    let poses: HashMap<u64, _> = read_frames(&run.path().join(FRAMES_DIR).join(FRAMES_SIDECAR))
        .unwrap()
        .into_iter()
        .map(|r| (seconds_to_us(r.t), r.camera_pose))
        .collect();
    let mut oracle = OracleDetector::new(ShipModel::default_ship(), cfg.camera.intrinsics, OracleNoise::default());
    oracle.ship_pose = cfg.ship_pose();
    let calls = Arc::new(AtomicU32::new(0));
    let counter = calls.clone();
    let server = spawn_detect_server("127.0.0.1:0", move |req| {
        if counter.fetch_add(1, Ordering::SeqCst) % 5 == 4 {
            std::thread::sleep(Duration::from_millis(250));
        }
        let pose = poses[&req.timestamp_us];
        let obs = oracle.observe(&oracle.ship_pose.inverse().compose(&pose), req.timestamp_us as f64);
        DetectResponse::from_observations(req.sequence, &obs).encode()
    })
    .unwrap();

    let remote = splatloop::posepipe::RemoteDetector::connect(server.local_addr(), Duration::from_millis(100)).unwrap();
    let out = tempfile::tempdir().unwrap();
    let r = replay_offline(run.path(), &remote, out.path()).unwrap();
    server.shutdown();
    assert_eq!(r.frames, 31);
    let rate = r.metrics.fix_rate_pct();
    assert!((70.0..=85.0).contains(&rate), "fix rate {rate}%");
    assert!(r.metrics.mae_position.unwrap() < 0.01);
}

#[test]
fn report_marks_partial_runs() {
    let run = tempfile::tempdir().unwrap();
    run_scenario(&hover(1.0), run.path()).unwrap();
    std::fs::write(run.path().join(STATUS_FILE), "state=running\n").unwrap();
    let r = report(run.path()).unwrap();
    assert!(r.partial);
    assert!(r.text.starts_with("WARNING"));
}

#[test]
fn report_with_no_fixes_is_na() {
    let mut cfg = hover(1.0);
    cfg.detector = DetectorConfig::Oracle(OracleNoise {
        dropout_prob: 1.0,
        ..OracleNoise::default()
    });
    let run = tempfile::tempdir().unwrap();
    let s = run_scenario(&cfg, run.path()).unwrap();
    let m = s.metrics.unwrap();
    assert_eq!(m.fix_rate_pct(), 0.0);
    assert!(m.table_row().contains("N/A"));
}

#[test]
fn long_outage_completes_degraded() {
    let mut cfg = hover(5.0);
    cfg.detector = DetectorConfig::Oracle(OracleNoise {
        dropout_prob: 1.0,
        ..OracleNoise::default()
    });
    let run = tempfile::tempdir().unwrap();
    let s = run_scenario(&cfg, run.path()).unwrap();
    assert!(s.degraded);
    assert_eq!(s.exit_code(), 3);
    assert!(std::fs::read_to_string(run.path().join(REPORT_FILE)).unwrap().contains("DEGRADED"));
}
