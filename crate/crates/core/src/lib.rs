//! Vision-in-the-loop simulation of a shipboard quadrotor.
//!
//! The loop closes entirely in software: the simulated vehicle's true pose
//! drives a tile-based Gaussian splatting renderer, rendered frames go through
//! a keypoint detector into a per-part EPnP solver and confidence-weighted
//! fusion, a delayed error-state Kalman filter blends the vision fixes with
//! IMU data, and a geometric tracking controller flies the reference path.
//!
//! Modules map onto the stages of that loop:
//!
//! - [`geometry`]: rotations, poses and rigid-body state.
//! - [`splat`]: scene loading/synthesis, spherical harmonics, EWA projection
//!   and the tile rasterizer.
//! - [`posepipe`]: detectors, EPnP, pose fusion.
//! - [`vehicle`]: Newton-Euler dynamics, geometric controller, trajectories,
//!   IMU model.
//! - [`estimator`]: delayed-measurement ESKF and consistency statistics.
//! - [`netlink`]: pose-stream datagrams, detector RPC, message logs.
//! - [`harness`]: scenario configuration, the master loop, metrics, reports.

pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod netlink;
pub mod posepipe;
pub mod splat;
pub mod vehicle;

pub use geometry::{Pose, Rotation, StateVector};
