//! Scenario runner for the simulated quadruped fleet: configuration,
//! robot simulation loop, hub wiring, merging and artifact export.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod drive;
pub mod robot;
pub mod runner;

use fleetslam_core::filter::FilterError;
use fleetslam_core::gait::GaitError;
use fleetslam_core::graph::GraphError;
use fleetslam_core::grid::GridError;
use fleetslam_core::metrics::MetricsError;
use fleetslam_core::world::WorldError;
use fleetslam_hub::HubError;
use thiserror::Error;

pub use config::{ConfigError, ScenarioConfig};
pub use runner::{run_scenario, RunMetrics, RunOptions, RunOutput, Transport};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("graph backend: {0}")]
    Graph(#[from] GraphError),
    #[error("filter backend: {0}")]
    Filter(#[from] FilterError),
    #[error("gait: {0}")]
    Gait(#[from] GaitError),
    #[error("simulation: {0}")]
    World(#[from] WorldError),
    #[error("map: {0}")]
    Grid(#[from] GridError),
    #[error("hub: {0}")]
    Hub(#[from] HubError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Io(String),
    #[error("robot crashed: {0}")]
    Crashed(String),
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}
