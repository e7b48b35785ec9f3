use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::VehicleError;

/// Desired flat outputs at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefPoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

fn default_speed() -> f64 {
    1.0
}
fn default_blend() -> f64 {
    1.0
}
fn default_hold() -> f64 {
    1.0
}

/// Scenario-level trajectory description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectorySpec {
    Hover {
        position: [f64; 3],
        duration: f64,
        #[serde(default)]
        yaw: f64,
    },
    /// Takeoff from `deck` to `start`, fly to `end`, land back on `deck`.
    Straight {
        deck: [f64; 3],
        start: [f64; 3],
        end: [f64; 3],
        #[serde(default = "default_speed")]
        speed: f64,
        #[serde(default = "default_blend")]
        blend: f64,
        #[serde(default = "default_hold")]
        hold: f64,
        #[serde(default)]
        yaw: f64,
    },
    /// Waypoint `i` is `start + i * advance`, offset by `swing` on odd `i`.
    Zigzag {
        deck: [f64; 3],
        start: [f64; 3],
        advance: [f64; 3],
        swing: [f64; 3],
        legs: usize,
        #[serde(default = "default_speed")]
        speed: f64,
        #[serde(default = "default_blend")]
        blend: f64,
        #[serde(default = "default_hold")]
        hold: f64,
        #[serde(default)]
        yaw: f64,
    },
}

impl TrajectorySpec {
    /// Path vertices including the deck at both ends (hover: one point).
    pub fn waypoints(&self) -> Vec<Vector3<f64>> {
        match self {
            Self::Hover { position, .. } => vec![Vector3::from(*position)],
            Self::Straight { deck, start, end, .. } => {
                vec![Vector3::from(*deck), Vector3::from(*start), Vector3::from(*end), Vector3::from(*deck)]
            }
            Self::Zigzag {
                deck,
                start,
                advance,
                swing,
                legs,
                ..
            } => {
                let (s, a, w) = (Vector3::from(*start), Vector3::from(*advance), Vector3::from(*swing));
                let mut pts = vec![Vector3::from(*deck)];
                pts.extend((0..=*legs).map(|i| s + a * i as f64 + if i % 2 == 1 { w } else { Vector3::zeros() }));
                pts.push(Vector3::from(*deck));
                pts
            }
        }
    }
}

/// Quintic smoothstep and its derivatives: s, s', s''.
fn smoothstep(tau: f64) -> (f64, f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    let dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
    (s, ds, dds)
}

/// Integral of the smoothstep from 0 to tau.
fn smoothstep_integral(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t.powi(4) * (2.5 - 3.0 * t + t * t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Hold {
        at: Vector3<f64>,
        duration: f64,
    },
    /// Rest-to-rest line: speed ramps up over `blend`, cruises, ramps down.
    Leg {
        from: Vector3<f64>,
        to: Vector3<f64>,
        duration: f64,
        blend: f64,
    },
}

impl Segment {
    fn duration(&self) -> f64 {
        match self {
            Segment::Hold { duration, .. } | Segment::Leg { duration, .. } => *duration,
        }
    }

    fn eval(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        match *self {
            Segment::Hold { at, .. } => (at, Vector3::zeros(), Vector3::zeros()),
            Segment::Leg {
                from,
                to,
                duration,
                blend,
            } => {
                let d = to - from;
                let len = d.norm();
                if len == 0.0 {
                    return (from, Vector3::zeros(), Vector3::zeros());
                }
                let dir = d / len;
                let t = t.clamp(0.0, duration);
                let cruise = len / (duration - blend);
                let (s, v, a) = if t < blend {
                    let (sv, ds, _) = smoothstep(t / blend);
                    (cruise * blend * smoothstep_integral(t / blend), cruise * sv, cruise / blend * ds)
                } else if t <= duration - blend {
                    (cruise * (blend / 2.0 + (t - blend)), cruise, 0.0)
                } else {
                    let tau = (duration - t) / blend;
                    let (sv, ds, _) = smoothstep(tau);
                    (len - cruise * blend * smoothstep_integral(tau), cruise * sv, -cruise / blend * ds)
                };
                (from + dir * s, dir * v, dir * a)
            }
        }
    }
}

/// Piecewise reference: rest-to-rest legs joined by holds.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    segments: Vec<Segment>,
    starts: Vec<f64>,
    yaw: f64,
}

impl ReferenceTrajectory {
    fn from_segments(segments: Vec<Segment>, yaw: f64) -> Self {
        let mut starts = Vec::with_capacity(segments.len());
        let mut t = 0.0;
        for s in &segments {
            starts.push(t);
            t += s.duration();
        }
        Self { segments, starts, yaw }
    }

    pub fn hover(position: Vector3<f64>, duration: f64, yaw: f64) -> Self {
        Self::from_segments(vec![Segment::Hold { at: position, duration }], yaw)
    }

    /// A single rest-to-rest leg lasting `duration` with ramps of `blend`.
    pub fn leg(from: Vector3<f64>, to: Vector3<f64>, duration: f64, blend: f64) -> Result<Self, VehicleError> {
        if !(blend > 0.0 && duration >= 2.0 * blend) {
            return Err(VehicleError::InvalidTrajectory(format!(
                "leg of {duration} s cannot fit two {blend} s blends"
            )));
        }
        Ok(Self::from_segments(
            vec![Segment::Leg {
                from,
                to,
                duration,
                blend,
            }],
            0.0,
        ))
    }

    /// Visits `points` in order at cruise `speed`, pausing `hold` at each.
    pub fn through(points: &[Vector3<f64>], speed: f64, blend: f64, hold: f64, yaw: f64) -> Result<Self, VehicleError> {
        let invalid = |m: String| Err(VehicleError::InvalidTrajectory(m));
        if points.is_empty() {
            return invalid("no waypoints".into());
        }
        if !(speed > 0.0 && speed.is_finite()) {
            return invalid(format!("speed {speed}"));
        }
        if !(blend > 0.0 && blend.is_finite()) {
            return invalid(format!("blend {blend}"));
        }
        if !(hold >= 0.0 && hold.is_finite()) {
            return invalid(format!("hold {hold}"));
        }
        if !yaw.is_finite() || points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return invalid("non-finite waypoint".into());
        }
        let mut segs = Vec::new();
        for w in points.windows(2) {
            if hold > 0.0 {
                segs.push(Segment::Hold { at: w[0], duration: hold });
            }
            let len = (w[1] - w[0]).norm();
            segs.push(Segment::Leg {
                from: w[0],
                to: w[1],
                duration: (len / speed + blend).max(2.0 * blend),
                blend,
            });
        }
        if hold > 0.0 || segs.is_empty() {
            segs.push(Segment::Hold {
                at: *points.last().expect("non-empty"),
                duration: hold,
            });
        }
        Ok(Self::from_segments(segs, yaw))
    }

    pub fn from_spec(spec: &TrajectorySpec) -> Result<Self, VehicleError> {
        match spec {
            TrajectorySpec::Hover { position, duration, yaw } => {
                if !(*duration > 0.0) {
                    return Err(VehicleError::InvalidTrajectory(format!("duration {duration}")));
                }
                Ok(Self::hover(Vector3::from(*position), *duration, *yaw))
            }
            TrajectorySpec::Straight {
                speed, blend, hold, yaw, ..
            } => Self::through(&spec.waypoints(), *speed, *blend, *hold, *yaw),
            TrajectorySpec::Zigzag {
                legs,
                speed,
                blend,
                hold,
                yaw,
                ..
            } => {
                if *legs == 0 {
                    return Err(VehicleError::InvalidTrajectory("zigzag needs at least one leg".into()));
                }
                Self::through(&spec.waypoints(), *speed, *blend, *hold, *yaw)
            }
        }
    }

    pub fn duration(&self) -> f64 {
        self.starts.last().copied().unwrap_or(0.0) + self.segments.last().map_or(0.0, Segment::duration)
    }

    /// Reference at time `t`; clamps to the ends outside [0, duration].
    pub fn sample(&self, t: f64) -> RefPoint {
        let i = self.starts.partition_point(|s| *s <= t).saturating_sub(1);
        let (position, velocity, acceleration) = self.segments[i].eval(t - self.starts[i]);
        RefPoint {
            position,
            velocity,
            acceleration,
            yaw: self.yaw,
            yaw_rate: 0.0,
        }
    }

    /// Sum of straight-line leg lengths.
    pub fn path_length(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Leg { from, to, .. } => (to - from).norm(),
                Segment::Hold { .. } => 0.0,
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_integral_matches_quadrature() {
        for tau in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let n = 10_000;
            let h = tau / n as f64;
            // Simpson's rule
            let mut acc = smoothstep(0.0).0 + smoothstep(tau).0;
            for k in 1..n {
                acc += smoothstep(k as f64 * h).0 * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            assert!((acc * h / 3.0 - smoothstep_integral(tau)).abs() < 1e-12);
        }
        assert_eq!(smoothstep_integral(1.0), 0.5);
    }

    #[test]
    fn hover_spec_is_constant() {
        let p = [1.0, 2.0, 3.0];
        let tr = ReferenceTrajectory::from_spec(&TrajectorySpec::Hover {
            position: p,
            duration: 5.0,
            yaw: 0.0,
        })
        .unwrap();
        for k in 0..=60 {
            let r = tr.sample(k as f64 * 0.1 - 0.5);
            assert_eq!(r.position, Vector3::from(p));
            assert_eq!(r.velocity, Vector3::zeros());
            assert_eq!(r.acceleration, Vector3::zeros());
        }
    }

    #[test]
    fn straight_leg_midpoint() {
        let a = Vector3::new(-1.0, 2.0, 1.0);
        let b = Vector3::new(5.0, -2.0, 3.0);
        for (t, blend) in [(10.0, 1.0), (4.0, 2.0), (7.0, 0.5)] {
            let tr = ReferenceTrajectory::leg(a, b, t, blend).unwrap();
            let mid = tr.sample(t / 2.0).position;
            assert!((mid - (a + b) / 2.0).norm() < 1e-12);
            assert!((tr.sample(0.0).position - a).norm() < 1e-15);
            assert!((tr.sample(t).position - b).norm() < 1e-12);
            assert!(tr.sample(t).velocity.norm() < 1e-12);
        }
        assert!(ReferenceTrajectory::leg(a, b, 1.0, 1.0).is_err());
    }

    #[test]
    fn derivatives_are_consistent() {
        let spec = zigzag();
        let tr = ReferenceTrajectory::from_spec(&spec).unwrap();
        let h = 1e-5;
        let mut t = 0.013;
        while t < tr.duration() {
            let r = tr.sample(t);
            let fd_v = (tr.sample(t + h).position - tr.sample(t - h).position) / (2.0 * h);
            let fd_a = (tr.sample(t + h).velocity - tr.sample(t - h).velocity) / (2.0 * h);
            assert!((fd_v - r.velocity).norm() < 1e-6, "v at {t}");
            assert!((fd_a - r.acceleration).norm() < 1e-4, "a at {t}");
            t += 0.0371;
        }
    }

    #[test]
    fn position_and_velocity_continuous() {
        let tr = ReferenceTrajectory::from_spec(&zigzag()).unwrap();
        for s in &tr.starts {
            let before = tr.sample(s - 1e-9);
            let after = tr.sample(s + 1e-9);
            assert!((before.position - after.position).norm() < 1e-7);
            assert!((before.velocity - after.velocity).norm() < 1e-6);
        }
    }

    fn zigzag() -> TrajectorySpec {
        TrajectorySpec::Zigzag {
            deck: [-3.0, 0.0, 0.2],
            start: [-4.0, 0.0, 3.0],
            advance: [-1.5, 0.0, 0.2],
            swing: [0.0, 3.0, 0.0],
            legs: 4,
            speed: 0.8,
            blend: 1.0,
            hold: 1.0,
            yaw: 0.0,
        }
    }

    #[test]
    fn zigzag_arc_length() {
        let spec = zigzag();
        let pts = spec.waypoints();
        assert_eq!(pts.len(), 7);
        let expected: f64 = pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        let tr = ReferenceTrajectory::from_spec(&spec).unwrap();
        // trapezoid integration of speed
        let n = 200_000;
        let h = tr.duration() / n as f64;
        let mut arc = 0.0;
        for k in 0..n {
            let a = tr.sample(k as f64 * h).velocity.norm();
            let b = tr.sample((k + 1) as f64 * h).velocity.norm();
            arc += 0.5 * (a + b) * h;
        }
        assert!((arc - expected).abs() < 0.01 * expected, "{arc} vs {expected}");
        assert!((tr.path_length() - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        let mut s = zigzag();
        if let TrajectorySpec::Zigzag { legs, .. } = &mut s {
            *legs = 0;
        }
        assert!(ReferenceTrajectory::from_spec(&s).is_err());
        let mut s = zigzag();
        if let TrajectorySpec::Zigzag { speed, .. } = &mut s {
            *speed = -1.0;
        }
        assert!(ReferenceTrajectory::from_spec(&s).is_err());
    }

    #[test]
    fn spec_toml() {
        let s: TrajectorySpec = toml::from_str(
            "kind = \"straight\"\ndeck = [0.0, 0.0, 0.0]\nstart = [0.0, 0.0, 2.0]\nend = [-8.0, 0.0, 3.0]\n",
        )
        .unwrap();
        let tr = ReferenceTrajectory::from_spec(&s).unwrap();
        assert!((tr.path_length() - (2.0 + 65f64.sqrt() + 73f64.sqrt())).abs() < 1e-12);
        assert_eq!(tr.sample(1e9).position, Vector3::zeros());
    }
}
