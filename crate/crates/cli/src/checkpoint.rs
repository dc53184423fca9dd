//! Mid-run pose-graph checkpoints and resuming from them.
//!
//! A checkpoint is the graph file plus a JSON sidecar holding the scenario
//! and the simulation step. Resuming replays the simulation (ground truth,
//! sensors, estimation) to that step without mapping, then hands the
//! restored graph the remaining scans.

use crate::config::{Backend, ScenarioConfig};
use crate::robot::{RobotSim, SlamBackend};
use crate::runner::{RobotMetrics, SETTLE_TIME};
use crate::RunError;
use fleetslam_core::graph::{self, GraphSlam, MappingMode};
use fleetslam_core::metrics::{agreement, ate, TIME_TOLERANCE};
use fleetslam_core::OccupancyGrid;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub namespace: String,
    pub robot: usize,
    pub step: u64,
    pub scenario: ScenarioConfig,
}

pub fn sidecar_path(graph: &Path) -> PathBuf {
    let mut s = graph.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Checkpoints map inline so the saved graph depends only on the step.
fn checkpoint_scenario(cfg: &ScenarioConfig, namespace: &str) -> Result<(ScenarioConfig, usize), RunError> {
    let mut cfg = cfg.clone();
    cfg.graph.mode = MappingMode::Synchronous;
    let robot = cfg
        .robots
        .iter()
        .position(|r| r.namespace == namespace)
        .ok_or_else(|| RunError::Config(crate::config::ConfigError::Invalid(format!("no robot named {namespace:?}"))))?;
    if cfg.robots[robot].backend != Backend::Graph {
        return Err(RunError::Config(crate::config::ConfigError::Invalid(format!(
            "{namespace} does not use the graph backend"
        ))));
    }
    Ok((cfg, robot))
}

fn finished(sim: &RobotSim, cfg: &ScenarioConfig) -> bool {
    sim.time() >= cfg.duration - 1e-9 || sim.route_done_at.is_some_and(|t| sim.time() >= t + SETTLE_TIME - 1e-9)
}

/// Run one robot of the scenario until simulated time `at`, then write the
/// graph to `path` and its sidecar next to it.
pub fn export_checkpoint(cfg: &ScenarioConfig, namespace: &str, at: f64, path: &Path) -> Result<Sidecar, RunError> {
    let (cfg, robot) = checkpoint_scenario(cfg, namespace)?;
    let env = Arc::new(cfg.load_environment()?);
    cfg.validate(&env)?;
    let cfg = Arc::new(cfg);
    let mut sim = RobotSim::new(env, cfg.clone(), robot, true, false)?;
    while sim.time() < at - 1e-9 && !finished(&sim, &cfg) {
        sim.advance(None)?;
    }
    let bytes = match sim.backend() {
        Some(SlamBackend::Graph(g)) => g.save(),
        _ => unreachable!("checkpoint robots map inline with the graph backend"),
    };
    let side = Sidecar {
        namespace: namespace.to_string(),
        robot,
        step: sim.step,
        scenario: (*cfg).clone(),
    };
    sim.shutdown()?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    std::fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&side).map_err(|e| RunError::Io(e.to_string()))?,
    )?;
    Ok(side)
}

pub struct Resumed {
    pub map: OccupancyGrid,
    pub graph: Vec<u8>,
    pub metrics: RobotMetrics,
}

/// Continue a checkpointed robot to the end of its scenario.
pub fn resume_checkpoint(path: &Path) -> Result<Resumed, RunError> {
    let side: Sidecar =
        serde_json::from_slice(&std::fs::read(sidecar_path(path))?).map_err(|e| RunError::Io(format!("checkpoint sidecar: {e}")))?;
    let saved = graph::deserialize(&std::fs::read(path)?).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    resume_from(saved, &side)
}

pub fn resume_from(saved: graph::SavedGraph, side: &Sidecar) -> Result<Resumed, RunError> {
    let (cfg, robot) = checkpoint_scenario(&side.scenario, &side.namespace)?;
    let (g, same) = GraphSlam::restore(saved, cfg.graph.clone());
    if !same {
        log::warn!("checkpoint was written under a different graph configuration");
    }
    let env = Arc::new(cfg.load_environment()?);
    cfg.validate(&env)?;
    let cfg = Arc::new(cfg);
    let mut sim = RobotSim::new(env.clone(), cfg.clone(), robot, false, false)?;
    while sim.step < side.step {
        sim.advance(None)?;
    }
    sim.attach(SlamBackend::Graph(Box::new(g)));
    while !finished(&sim, &cfg) {
        sim.advance(None)?;
    }
    let start = sim.start();
    let sim_time = sim.time();
    let (backend, ll, log) = sim.shutdown()?;
    let mut backend = backend.expect("backend was attached");
    backend.finish()?;
    let map = backend.map();
    let trajectory = backend.trajectory();
    let graph = match &backend {
        SlamBackend::Graph(g) => g.save(),
        SlamBackend::Filter(_) => unreachable!(),
    };
    let metrics = RobotMetrics {
        namespace: side.namespace.clone(),
        summary: backend.summary(),
        ate: ate(&log.truth, &trajectory, TIME_TOLERANCE)?,
        ate_odometry: ate(&log.truth, &log.odometry, TIME_TOLERANCE)?,
        agreement: agreement(&map, &env, &start),
        sim_time,
        ll_frames_accepted: ll.accepted,
        ll_frames_rejected: ll.rejected,
    };
    Ok(Resumed { map, graph, metrics })
}
