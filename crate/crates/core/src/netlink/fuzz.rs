//! Robustness sweep over every decoder: random buffers, truncations and bit
//! flips of valid messages.

use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::detect::{read_frame, DetectRequest, DetectResponse, PixelFormat};
use super::pose_stream::PoseStreamMessage;
use super::record::{parse_log, LogWriter};
use crate::geometry::{Pose, Rotation};
use crate::posepipe::KeypointObservation;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuzzReport {
    pub cases: u64,
    /// Inputs the decoders refused.
    pub rejected: u64,
    /// Inputs accepted that re-encode to the exact same bytes.
    pub accepted_canonical: u64,
    /// Malformed inputs that were accepted. Must be zero.
    pub false_accepts: u64,
    pub panics: u64,
}

impl FuzzReport {
    pub fn clean(&self) -> bool {
        self.false_accepts == 0 && self.panics == 0
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Pose,
    Request,
    Response,
    Stream,
    Log,
}

const KINDS: [Kind; 5] = [Kind::Pose, Kind::Request, Kind::Response, Kind::Stream, Kind::Log];

/// Outcome of one decode: `None` rejected, `Some(true)` accepted and
/// canonical, `Some(false)` accepted but not canonical.
fn try_decode(kind: Kind, bytes: &[u8]) -> Option<bool> {
    match kind {
        Kind::Pose => PoseStreamMessage::decode(bytes).ok().map(|m| m.encode()[..] == *bytes),
        Kind::Request => DetectRequest::decode(bytes).ok().map(|m| m.encode() == bytes),
        Kind::Response => DetectResponse::decode(bytes).ok().map(|m| m.encode() == bytes),
        Kind::Stream => {
            // one or more whole length-prefixed frames
            let mut c = Cursor::new(bytes);
            loop {
                read_frame(&mut c).ok()?;
                if c.position() as usize == bytes.len() {
                    return Some(true);
                }
            }
        }
        Kind::Log => parse_log(bytes).ok().filter(|l| l.corrupt == 0).map(|l| {
            let mut w = LogWriter::new(Vec::new()).expect("vec write");
            for r in &l.records {
                w.append(r.timestamp_us, &r.payload).expect("vec write");
            }
            bytes.is_empty() || w.finish().expect("vec write") == bytes
        }),
    }
}

fn sample_valid(kind: Kind, rng: &mut ChaCha8Rng) -> Vec<u8> {
    match kind {
        Kind::Pose => {
            let rot = Rotation::from_ypr(rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), 0.2);
            let pose = Pose::new(nalgebra::Vector3::new(rng.random(), rng.random(), rng.random()), rot);
            PoseStreamMessage::from_pose(rng.random(), rng.random(), rng.random(), &pose)
                .encode()
                .to_vec()
        }
        Kind::Request => {
            let (w, h) = (rng.random_range(1..6u16), rng.random_range(1..6u16));
            DetectRequest {
                sequence: rng.random(),
                timestamp_us: rng.random(),
                width: w,
                height: h,
                format: PixelFormat::RawRgb8,
                payload: (0..w as usize * h as usize * 3).map(|_| rng.random()).collect(),
            }
            .encode()
        }
        Kind::Response => {
            let obs: Vec<KeypointObservation> = (0..rng.random_range(0..4))
                .map(|_| {
                    let k = rng.random_range(0..12);
                    KeypointObservation {
                        class_id: rng.random_range(0..6),
                        confidence: rng.random(),
                        keypoints: (0..k)
                            .map(|_| Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..640.0)))
                            .collect(),
                        visible: (0..k).map(|_| rng.random()).collect(),
                    }
                })
                .collect();
            DetectResponse::from_observations(rng.random(), &obs).encode()
        }
        Kind::Stream => {
            let body: Vec<u8> = (0..rng.random_range(0..40)).map(|_| rng.random()).collect();
            let mut v = (body.len() as u32).to_le_bytes().to_vec();
            v.extend(body);
            v
        }
        Kind::Log => {
            let mut w = LogWriter::new(Vec::new()).expect("vec write");
            for _ in 0..rng.random_range(1..4) {
                let p: Vec<u8> = (0..rng.random_range(0..20)).map(|_| rng.random()).collect();
                w.append(rng.random(), &p).expect("vec write");
            }
            w.finish().expect("vec write")
        }
    }
}

/// Runs `iterations` cases, cycling through decoders and mutation styles.
pub fn fuzz_decoders(seed: u64, iterations: u64) -> FuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FuzzReport::default();
    for i in 0..iterations {
        let kind = KINDS[(i % KINDS.len() as u64) as usize];
        let style = (i / KINDS.len() as u64) % 3;
        let (bytes, must_reject) = match style {
            0 => {
                let n = rng.random_range(0..128);
                let mut b: Vec<u8> = (0..n).map(|_| rng.random()).collect();
                // occasionally plant a valid magic so deeper paths get exercised
                if n >= 4 && rng.random_bool(0.5) {
                    let valid = sample_valid(kind, &mut rng);
                    let m = valid.len().min(4);
                    b[..m].copy_from_slice(&valid[..m]);
                }
                (b, false)
            }
            1 => {
                let valid = sample_valid(kind, &mut rng);
                let cut = rng.random_range(0..valid.len());
                // a log cut on a record boundary is still a valid log
                (valid[..cut].to_vec(), !matches!(kind, Kind::Log))
            }
            _ => {
                let mut b = sample_valid(kind, &mut rng);
                let at = rng.random_range(0..b.len());
                b[at] ^= 1 << rng.random_range(0..8);
                // a flipped magic byte must always be refused
                let magic_len = if matches!(kind, Kind::Log) { 8 } else { 4 };
                let must = at < magic_len && !matches!(kind, Kind::Stream);
                (b, must)
            }
        };
        report.cases += 1;
        match catch_unwind(AssertUnwindSafe(|| try_decode(kind, &bytes))) {
            Err(_) => report.panics += 1,
            Ok(None) => report.rejected += 1,
            Ok(Some(canonical)) => {
                if must_reject || !canonical {
                    report.false_accepts += 1;
                } else {
                    report.accepted_canonical += 1;
                }
            }
        }
    }
    report
}
