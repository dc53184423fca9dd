//! Core of a simulated multi-robot quadruped SLAM platform: world simulation,
//! gait and servo layer, state estimation, particle-filter and pose-graph SLAM,
//! map merging and run metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimation;
pub mod filter;
pub mod gait;
pub mod geometry;
pub mod graph;
pub mod grid;
pub mod merge;
pub mod metrics;
pub mod par;
pub mod world;

pub use geometry::{compose_se2, wrap_angle, Pose2, Twist2, TwistLimits};
pub use grid::{CellClass, OccupancyGrid};
pub use world::{Environment, ImuSample, LaserScan, LidarConfig, NoiseModel};
