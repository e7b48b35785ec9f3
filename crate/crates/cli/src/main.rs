use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use nalgebra::Vector3;

use splatloop::harness::{
    build_detector, compute_metrics, read_truth, read_vision, replay_offline, report, run_scenario, HarnessError,
    ScenarioConfig, SceneConfig, CONFIG_SNAPSHOT, TRUTH_FILE, VISION_FILE,
};
use splatloop::netlink::{fuzz_decoders, PixelFormat};
use splatloop::posepipe::{Detector, RemoteDetector};
use splatloop::splat::{load_scene, rasterize, CameraModel, Intrinsics, RenderOptions};
use splatloop::{Pose, Rotation};

#[derive(Parser)]
#[command(name = "splatloop", version, about = "Vision-in-the-loop UAV simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its run directory.
    Run {
        config: PathBuf,
        /// Run directory; defaults to runs/<scenario name>.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Recompute accuracy metrics from a run directory.
    Metrics { run_dir: PathBuf },
    /// Re-run detection and pose estimation over a run's saved frames.
    Replay {
        run_dir: PathBuf,
        /// `config` (the run's own detector) or `remote:HOST:PORT`.
        #[arg(long, default_value = "config")]
        detector: String,
        /// Request timeout for a remote detector, milliseconds.
        #[arg(long, default_value_t = 500)]
        timeout_ms: u64,
        /// Send PNG frames to a remote detector instead of raw RGB.
        #[arg(long)]
        png: bool,
        /// Output directory; defaults to <run_dir>/replay.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write report.txt and band.csv for a run directory.
    Report { run_dir: PathBuf },
    /// Render one frame. `scene` is a PLY file or a scenario TOML; the pose is
    /// the camera in the world: x y z qw qx qy qz, or x y z yaw pitch roll in
    /// degrees (optical axes: x right, y down, z forward).
    Render {
        scene: PathBuf,
        #[arg(num_args = 6..=7, allow_negative_numbers = true)]
        pose: Vec<f64>,
        #[arg(long, short, default_value = "frame.png")]
        out: PathBuf,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 640)]
        height: u32,
        #[arg(long, default_value_t = 580.0)]
        focal: f64,
    },
    /// Fuzz every wire decoder and report crashes and false accepts.
    ProtocolFuzz {
        #[arg(long, default_value_t = 1_000_000)]
        cases: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

enum Failure {
    Harness(HarnessError),
    Usage(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self::Harness(e)
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn snapshot(run_dir: &Path) -> Result<ScenarioConfig, Failure> {
    let path = run_dir.join(CONFIG_SNAPSHOT);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    Ok(ScenarioConfig::from_toml(&text)?)
}

fn camera_pose(v: &[f64]) -> Result<Pose, Failure> {
    let position = Vector3::new(v[0], v[1], v[2]);
    let rotation = match v.len() {
        7 => Rotation::from_wxyz(v[3], v[4], v[5], v[6]).map_err(|e| Failure::Usage(e.to_string()))?,
        6 => Rotation::from_ypr(v[3].to_radians(), v[4].to_radians(), v[5].to_radians()),
        n => return Err(Failure::Usage(format!("pose takes 6 or 7 numbers, got {n}"))),
    };
    Ok(Pose::new(position, rotation))
}

fn execute(cmd: Command) -> Result<i32, Failure> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
            let s = run_scenario(&cfg, &dir)?;
            let r = std::fs::read_to_string(dir.join("report.txt")).unwrap_or_default();
            print!("{r}");
            println!("run directory: {} ({:.1} s)", dir.display(), s.wall_time.as_secs_f64());
            if s.degraded {
                log::warn!("run completed with a degraded estimate");
            }
            Ok(s.exit_code())
        }
        Command::Metrics { run_dir } => {
            let cfg = snapshot(&run_dir)?;
            let truth = read_truth(&run_dir.join(TRUTH_FILE))?;
            let vision = read_vision(&run_dir.join(VISION_FILE))?;
            let m = compute_metrics(&truth, &vision, &cfg.ship_pose().position)?;
            println!("{m}");
            Ok(0)
        }
        Command::Replay {
            run_dir,
            detector,
            timeout_ms,
            png,
            out,
        } => {
            let cfg = snapshot(&run_dir)?;
            let det: Box<dyn Detector> = match detector.as_str() {
                "config" => {
                    let ship = splatloop::harness::load_ship(&cfg)?;
                    build_detector(&cfg, &ship)?
                }
                other => {
                    let endpoint = other
                        .strip_prefix("remote:")
                        .ok_or_else(|| Failure::Usage(format!("unknown detector '{other}'")))?;
                    let format = if png { PixelFormat::Png } else { PixelFormat::RawRgb8 };
                    let d = RemoteDetector::connect(endpoint, Duration::from_millis(timeout_ms))
                        .map_err(|e| Failure::Usage(format!("{endpoint}: {e}")))?;
                    Box::new(d.with_format(format))
                }
            };
            let out = out.unwrap_or_else(|| run_dir.join("replay"));
            let r = replay_offline(&run_dir, det.as_ref(), &out)?;
            println!("{}", r.metrics);
            println!("replayed {} frames into {}", r.frames, r.vision_log.display());
            Ok(0)
        }
        Command::Report { run_dir } => {
            let r = report(&run_dir)?;
            print!("{}", r.text);
            Ok(0)
        }
        Command::Render {
            scene,
            pose,
            out,
            width,
            height,
            focal,
        } => {
            let pose = camera_pose(&pose)?;
            let model = if scene.extension().is_some_and(|e| e == "toml") {
                let cfg = ScenarioConfig::load(&scene)?;
                match &cfg.scene {
                    SceneConfig::File { path } => load_scene(path).map_err(HarnessError::from)?,
                    SceneConfig::Synthetic { .. } => {
                        let ship = splatloop::harness::load_ship(&cfg)?;
                        splatloop::harness::load_scene_for(&cfg, &ship)?
                    }
                }
            } else {
                load_scene(&scene).map_err(runtime)?
            };
            let intr = Intrinsics {
                width,
                height,
                fx: focal,
                fy: focal,
                cx: width as f64 / 2.0,
                cy: height as f64 / 2.0,
            };
            let cam = CameraModel::new(intr, pose).map_err(|e| Failure::Usage(e.to_string()))?;
            let frame = rasterize(&model, &cam, &RenderOptions::default()).map_err(runtime)?;
            frame.save_png(&out).map_err(runtime)?;
            println!("{} Gaussians -> {}", model.len(), out.display());
            Ok(0)
        }
        Command::ProtocolFuzz { cases, seed } => {
            let r = fuzz_decoders(seed, cases);
            println!(
                "cases {} rejected {} accepted {} false_accepts {} panics {}",
                r.cases, r.rejected, r.accepted_canonical, r.false_accepts, r.panics
            );
            Ok(if r.clean() { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure::Harness(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
