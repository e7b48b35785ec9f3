//! Run-directory CSV files: writers for the vision log and frame sidecar,
//! readers for everything the metrics and replay paths consume.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::HarnessError;
use crate::geometry::{Pose, Rotation};

pub const TRUTH_FILE: &str = "truth.csv";
pub const ESTIMATE_FILE: &str = "estimate.csv";
pub const VISION_FILE: &str = "vision.csv";
pub const FRAMES_DIR: &str = "frames";
pub const FRAMES_SIDECAR: &str = "frames.csv";
pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const REPORT_FILE: &str = "report.txt";
pub const STATUS_FILE: &str = "status.txt";

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// One vision epoch, as logged. `pose` is the vehicle body pose in the world
/// frame implied by the fix.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionRow {
    pub t: f64,
    pub fix: Option<VisionFix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisionFix {
    pub pose: Pose,
    pub n_classes: usize,
    pub pos_sigma: f64,
    pub rot_sigma_deg: f64,
    pub reproj_rms: f64,
}

pub struct VisionLogWriter<W: Write> {
    out: W,
}

impl<W: Write> VisionLogWriter<W> {
    pub const HEADER: &'static str = "t,fix,n_classes,x,y,z,qw,qx,qy,qz,pos_sigma,rot_sigma_deg,reproj_rms";

    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{}", Self::HEADER)?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &VisionRow) -> std::io::Result<()> {
        match &row.fix {
            Some(f) => {
                let p = f.pose.position;
                let [qw, qx, qy, qz] = f.pose.rotation.wxyz();
                writeln!(
                    self.out,
                    "{:.6},1,{},{},{},{},{},{},{},{},{},{},{}",
                    row.t, f.n_classes, p.x, p.y, p.z, qw, qx, qy, qz, f.pos_sigma, f.rot_sigma_deg, f.reproj_rms
                )
            }
            None => writeln!(self.out, "{:.6},0,0,,,,,,,,,,", row.t),
        }
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Sidecar row for a dumped frame: capture time and true camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRow {
    pub index: usize,
    pub t: f64,
    pub camera_pose: Pose,
}

pub const FRAMES_HEADER: &str = "index,t,x,y,z,qw,qx,qy,qz";

pub fn write_frame_row(out: &mut impl Write, row: &FrameRow) -> std::io::Result<()> {
    let p = row.camera_pose.position;
    let [qw, qx, qy, qz] = row.camera_pose.rotation.wxyz();
    writeln!(out, "{},{:.6},{},{},{},{},{},{},{}", row.index, row.t, p.x, p.y, p.z, qw, qx, qy, qz)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub t: f64,
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub sigma: Vector3<f64>,
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

/// Data rows of a CSV file, header checked against `header`.
fn rows<'a>(text: &'a str, header: &str, path: &Path) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>, HarnessError> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    if first.trim_end() != header {
        return Err(HarnessError::Log(format!("{}: unexpected header '{first}'", path.display())));
    }
    Ok(lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 2, l.split(',').collect())))
}

fn num(fields: &[&str], i: usize, line: usize, path: &Path) -> Result<f64, HarnessError> {
    fields
        .get(i)
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| HarnessError::Log(format!("{}:{line}: bad field {i}", path.display())))
}

fn pose_at(f: &[&str], at: usize, line: usize, path: &Path) -> Result<Pose, HarnessError> {
    let v: Vec<f64> = (at..at + 7).map(|i| num(f, i, line, path)).collect::<Result<_, _>>()?;
    let rot = Rotation::from_wxyz(v[3], v[4], v[5], v[6])
        .map_err(|e| HarnessError::Log(format!("{}:{line}: {e}", path.display())))?;
    Ok(Pose::new(Vector3::new(v[0], v[1], v[2]), rot))
}

fn vec_at(f: &[&str], at: usize, line: usize, path: &Path) -> Result<Vector3<f64>, HarnessError> {
    Ok(Vector3::new(num(f, at, line, path)?, num(f, at + 1, line, path)?, num(f, at + 2, line, path)?))
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>, HarnessError> {
    let text = read_text(path)?;
    let out = rows(&text, crate::vehicle::TruthLogWriter::<Vec<u8>>::HEADER, path)?
        .map(|(line, f)| {
            Ok(TruthRow {
                t: num(&f, 0, line, path)?,
                pose: pose_at(&f, 1, line, path)?,
                velocity: vec_at(&f, 8, line, path)?,
                angular_velocity: vec_at(&f, 11, line, path)?,
            })
        })
        .collect();
    out
}

pub fn read_estimate(path: &Path) -> Result<Vec<EstimateRow>, HarnessError> {
    let text = read_text(path)?;
    let out = rows(&text, crate::estimator::EstimateLogWriter::<Vec<u8>>::HEADER, path)?
        .map(|(line, f)| {
            Ok(EstimateRow {
                t: num(&f, 0, line, path)?,
                pose: pose_at(&f, 1, line, path)?,
                velocity: vec_at(&f, 8, line, path)?,
                sigma: vec_at(&f, 11, line, path)?,
            })
        })
        .collect();
    out
}

pub fn read_vision(path: &Path) -> Result<Vec<VisionRow>, HarnessError> {
    let text = read_text(path)?;
    let out = rows(&text, VisionLogWriter::<Vec<u8>>::HEADER, path)?
        .map(|(line, f)| {
            let t = num(&f, 0, line, path)?;
            let fix = match f.get(1).map(|s| s.trim()) {
                Some("1") => Some(VisionFix {
                    n_classes: num(&f, 2, line, path)? as usize,
                    pose: pose_at(&f, 3, line, path)?,
                    pos_sigma: num(&f, 10, line, path)?,
                    rot_sigma_deg: num(&f, 11, line, path)?,
                    reproj_rms: num(&f, 12, line, path)?,
                }),
                Some("0") => None,
                _ => return Err(HarnessError::Log(format!("{}:{line}: bad fix flag", path.display()))),
            };
            Ok(VisionRow { t, fix })
        })
        .collect();
    out
}

pub fn read_frames(path: &Path) -> Result<Vec<FrameRow>, HarnessError> {
    let text = read_text(path)?;
    let out = rows(&text, FRAMES_HEADER, path)?
        .map(|(line, f)| {
            Ok(FrameRow {
                index: num(&f, 0, line, path)? as usize,
                t: num(&f, 1, line, path)?,
                camera_pose: pose_at(&f, 2, line, path)?,
            })
        })
        .collect();
    out
}
