use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::Matrix3;
use rayon::prelude::*;

use super::{
    epnp_solve, fuse_poses, reprojection_rms, Correspondence, Detector, FusionConfig, FusionOutcome,
    KeypointObservation, PoseError, PoseEstimate, ShipModel,
};
use crate::splat::{Frame, Intrinsics};

/// Wall-clock time spent in each stage. Diagnostic only.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub detect: Duration,
    pub pnp: Duration,
    pub fuse: Duration,
}

/// One part's EPnP result and the data behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEstimate {
    pub observation: KeypointObservation,
    pub estimate: PoseEstimate,
    pub correspondences: Vec<Correspondence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEstimate {
    pub timestamp: f64,
    pub outcome: FusionOutcome,
    pub per_class: Vec<ClassEstimate>,
    pub timings: StageTimings,
}

/// Detect, solve each part, fuse. The fused estimate's reprojection RMS is
/// taken over every correspondence of the parts that survived fusion.
pub fn estimate_from_frame(
    frame: &Frame,
    detector: &dyn Detector,
    models: &ShipModel,
    intrinsics: &Intrinsics,
    cfg: &FusionConfig,
) -> Result<FrameEstimate, PoseError> {
    let t0 = Instant::now();
    let observations = detector.detect(frame)?;
    let t1 = Instant::now();

    let per_class: Vec<ClassEstimate> = observations
        .into_par_iter()
        .filter_map(|obs| {
            let model = models.class(obs.class_id)?;
            let corr = obs.correspondences(model);
            let sol = epnp_solve(&corr, intrinsics).ok()?;
            let sigma = cfg.sigma0 / obs.confidence.max(1e-9);
            Some(ClassEstimate {
                estimate: PoseEstimate {
                    pose: sol.pose,
                    position_cov: Matrix3::identity() * sigma * sigma,
                    rotation_conf: obs.confidence,
                    class_ids: vec![obs.class_id],
                    reprojection_rms: sol.reprojection_rms,
                },
                observation: obs,
                correspondences: corr,
            })
        })
        .collect();
    let t2 = Instant::now();

    let inputs: Vec<(PoseEstimate, f64)> = per_class
        .iter()
        .map(|c| (c.estimate.clone(), c.observation.confidence))
        .collect();
    let mut outcome = fuse_poses(&inputs, cfg);
    if let FusionOutcome::Fix(est) = &mut outcome {
        let corr: Vec<Correspondence> = per_class
            .iter()
            .filter(|c| est.class_ids.contains(&c.observation.class_id))
            .flat_map(|c| c.correspondences.iter().copied())
            .collect();
        est.reprojection_rms = reprojection_rms(&est.pose, &corr, intrinsics);
    }
    let t3 = Instant::now();

    Ok(FrameEstimate {
        timestamp: frame.timestamp,
        outcome,
        per_class,
        timings: StageTimings {
            detect: t1 - t0,
            pnp: t2 - t1,
            fuse: t3 - t2,
        },
    })
}

/// Writes the pose pipeline CSV. Positions and rotations are the camera's
/// pose in the ship frame.
pub struct PoseLogWriter<W: Write> {
    out: W,
}

impl<W: Write> PoseLogWriter<W> {
    pub const HEADER: &'static str = "timestamp,fix,nx_classes,x,y,z,qw,qx,qy,qz,pos_sigma,reproj_rms";

    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{}", Self::HEADER)?;
        Ok(Self { out })
    }

    pub fn write(&mut self, fe: &FrameEstimate) -> std::io::Result<()> {
        match fe.outcome.fix() {
            Some(est) => {
                let p = est.camera_in_ship();
                let q = p.rotation.wxyz();
                writeln!(
                    self.out,
                    "{:.6},1,{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6}",
                    fe.timestamp,
                    est.class_ids.len(),
                    p.position.x,
                    p.position.y,
                    p.position.z,
                    q[0],
                    q[1],
                    q[2],
                    q[3],
                    est.position_sigma(),
                    est.reprojection_rms
                )
            }
            None => writeln!(self.out, "{:.6},0,0,,,,,,,,,", fe.timestamp),
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_deg, Pose, Rotation};
    use crate::posepipe::{OracleDetector, OracleNoise};
    use crate::splat::forward_camera_mount;
    use nalgebra::Vector3;

    fn frame_at(cam: Pose, t: f64) -> Frame {
        Frame::new(1, 1, vec![0; 3], t, cam)
    }

    fn camera(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
        Pose::new(Vector3::new(x, y, z), Rotation::rot_z(yaw)).compose(&forward_camera_mount(0.3))
    }

    #[test]
    fn noise_free_end_to_end() {
        let models = ShipModel::default_ship();
        let det = OracleDetector::new(models.clone(), Intrinsics::default(), OracleNoise::default());
        for (i, cam) in [camera(-12.0, 0.0, 4.0, 0.0), camera(-9.0, -2.0, 3.0, 0.15), camera(-15.0, 3.0, 6.0, -0.2)]
            .into_iter()
            .enumerate()
        {
            let fe = estimate_from_frame(&frame_at(cam, i as f64), &det, &models, &det.intrinsics, &FusionConfig::default())
                .unwrap();
            let est = fe.outcome.fix().expect("fix");
            let got = est.camera_in_ship();
            assert!((got.position - cam.position).norm() < 1e-4);
            assert!(geodesic_deg(&got.rotation, &cam.rotation) < 1e-3);
            let worst = fe.per_class.iter().map(|c| c.estimate.reprojection_rms).fold(0.0, f64::max);
            assert!(est.reprojection_rms <= worst + 1.0);
        }
    }

    #[test]
    fn all_dropped_is_no_fix() {
        let models = ShipModel::default_ship();
        let det = OracleDetector::new(
            models.clone(),
            Intrinsics::default(),
            OracleNoise {
                dropout_prob: 1.0,
                ..Default::default()
            },
        );
        let fe = estimate_from_frame(
            &frame_at(camera(-12.0, 0.0, 4.0, 0.0), 0.0),
            &det,
            &models,
            &det.intrinsics,
            &FusionConfig::default(),
        )
        .unwrap();
        assert_eq!(fe.outcome, FusionOutcome::NoFix);
        let mut log = PoseLogWriter::new(Vec::new()).unwrap();
        log.write(&fe).unwrap();
        let text = String::from_utf8(log.into_inner()).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert_eq!(row.split(',').count(), 12);
        assert!(row.starts_with("0.000000,0,"));
    }
}
