use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{Matrix3, Vector2, Vector3};

use splatloop::estimator::{DelayedEskf, EstimatorConfig, FilterState, PoseMeasurement};
use splatloop::harness::{synthetic_ship_scene, CameraConfig};
use splatloop::netlink::PoseStreamMessage;
use splatloop::posepipe::{epnp_solve, Correspondence, ShipModel};
use splatloop::splat::{render_at, Intrinsics, RenderOptions};
use splatloop::vehicle::{dynamics_step, geometric_control, ImuSample, RefPoint, VehicleParams};
use splatloop::{Pose, Rotation, StateVector};

fn render(c: &mut Criterion) {
    let ship = ShipModel::default_ship();
    let rig = CameraConfig::default().rig();
    let body = Pose::new(Vector3::new(-7.0, -1.5, 3.4), Rotation::rot_z(0.1));
    let mut g = c.benchmark_group("render_640");
    g.sample_size(10);
    for n in [30_000usize, 100_000] {
        let scene = synthetic_ship_scene(&ship, &Pose::identity(), n, 7).unwrap();
        g.bench_function(format!("{n}_gaussians"), |b| {
            b.iter(|| render_at(&scene, &body, &rig, &RenderOptions::default(), 0.0).unwrap())
        });
    }
    g.finish();
}

fn epnp(c: &mut Criterion) {
    let intr = Intrinsics::default();
    let truth = Pose::new(Vector3::new(0.2, -0.1, 10.0), Rotation::from_ypr(0.4, -0.2, 0.3));
    let corr: Vec<_> = (0..8)
        .map(|i| {
            let f = i as f64;
            let m = Vector3::new((f * 1.3).sin() * 1.5, (f * 2.1).cos() * 1.5, (f * 0.7).sin());
            let px: Vector2<f64> = intr.project(&truth.transform_point(&m)).unwrap();
            Correspondence::new(m, px)
        })
        .collect();
    c.bench_function("epnp_8_points", |b| b.iter(|| epnp_solve(black_box(&corr), &intr).unwrap()));
}

fn control_and_dynamics(c: &mut Criterion) {
    let p = VehicleParams::default();
    let s = StateVector::at_rest(Pose::new(Vector3::new(0.0, 0.0, 2.0), Rotation::from_ypr(0.1, 0.05, 0.0)), 0.0);
    let r = RefPoint {
        position: Vector3::new(0.5, 0.0, 2.0),
        ..RefPoint::default()
    };
    c.bench_function("control_plus_rk4_step", |b| {
        b.iter(|| {
            let out = geometric_control(black_box(&s), &r, &p);
            dynamics_step(&s, &out.command, &p, 0.001).unwrap()
        })
    });
}

fn delayed_update(c: &mut Criterion) {
    let cfg = EstimatorConfig::default();
    let s = StateVector::at_rest(Pose::from_translation(Vector3::new(0.0, 0.0, 2.0)), 0.0);
    let mut filter = DelayedEskf::new(FilterState::new(&s, cfg.initial_cov()), cfg.clone()).unwrap();
    for k in 0..500 {
        let imu = ImuSample {
            timestamp: k as f64 * 0.001,
            gyro: Vector3::zeros(),
            accel: Vector3::new(0.0, 0.0, cfg.gravity),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
        };
        filter.propagate(&imu, 0.001).unwrap();
    }
    let m = PoseMeasurement {
        pose: Pose::from_translation(Vector3::new(0.01, 0.0, 2.0)),
        position_cov: Matrix3::identity() * 0.0025,
        rotation_sigma: 0.01,
        capture_timestamp: 0.4,
        arrival_timestamp: 0.5,
    };
    c.bench_function("delayed_update_100ms_rewind", |b| {
        b.iter(|| {
            let mut f = filter.clone();
            f.update_delayed(black_box(m)).unwrap();
            f
        })
    });
}

fn datagram(c: &mut Criterion) {
    let msg = PoseStreamMessage::from_pose(1, 2, 3, &Pose::new(Vector3::new(1.0, 2.0, 3.0), Rotation::rot_z(0.3)));
    let bytes = msg.encode();
    c.bench_function("pose_datagram_decode", |b| b.iter(|| PoseStreamMessage::decode(black_box(&bytes)).unwrap()));
}

criterion_group!(benches, render, epnp, control_and_dynamics, delayed_update, datagram);
criterion_main!(benches);
