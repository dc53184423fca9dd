//! Pose-graph SLAM: nodes carry a pose estimate and the scan taken there, edges
//! carry relative-pose constraints from odometry, sequential scan matching and
//! loop closure.

pub mod matcher;
pub mod mode;
pub mod optimize;
pub mod serialize;

pub use matcher::{scan_match, MatchError, MatchResult, MatcherConfig};
pub use mode::{scan_queue, MappingMode, ScanConsumer, ScanProducer};
pub use optimize::{optimize, OptimizeReport, OptimizerConfig};
pub use serialize::{deserialize, serialize, SavedGraph, SerializeError};

use crate::geometry::Pose2;
use crate::grid::OccupancyGrid;
use crate::world::LaserScan;
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {0} is not connected to the anchor")]
    Disconnected(u64),
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("normal equations are singular even with damping")]
    Singular,
    #[error("edge from a node to itself ({0})")]
    SelfLoop(u64),
    #[error("information matrix is not symmetric positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Odometry,
    ScanMatch,
    LoopClosure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraphNode {
    pub id: u64,
    pub pose: Pose2,
    pub scan: LaserScan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraphEdge {
    pub from: u64,
    pub to: u64,
    /// pose of `to` in the frame of `from`
    pub measurement: Pose2,
    pub information: [[f64; 3]; 3],
    pub kind: EdgeKind,
}

fn is_spd(m: &[[f64; 3]; 3]) -> bool {
    let mm = Matrix3::from_fn(|r, c| m[r][c]);
    (0..3).all(|r| (0..3).all(|c| (m[r][c] - m[c][r]).abs() <= 1e-12 * (1.0 + m[r][c].abs()))) && mm.cholesky().is_some()
}

pub fn diag_information(d: [f64; 3]) -> [[f64; 3]; 3] {
    [[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]]
}

impl PoseGraphEdge {
    pub fn new(from: u64, to: u64, measurement: Pose2, information: [[f64; 3]; 3], kind: EdgeKind) -> Result<Self, GraphError> {
        if from == to {
            return Err(GraphError::SelfLoop(from));
        }
        if !is_spd(&information) {
            return Err(GraphError::NotPositiveDefinite);
        }
        Ok(Self {
            from,
            to,
            measurement,
            information,
            kind,
        })
    }

    pub fn information_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.information[r][c])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseGraph {
    pub nodes: Vec<PoseGraphNode>,
    pub edges: Vec<PoseGraphEdge>,
    pub anchor: u64,
}

impl PoseGraph {
    pub fn index_map(&self) -> HashMap<u64, usize> {
        self.nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect()
    }

    pub fn node(&self, id: u64) -> Option<&PoseGraphNode> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(|k| &self.nodes[k])
    }

    pub fn next_id(&self) -> u64 {
        self.nodes.last().map_or(0, |n| n.id + 1)
    }

    /// Appends a node; ids must keep increasing.
    pub fn push_node(&mut self, pose: Pose2, scan: LaserScan) -> u64 {
        let id = self.next_id();
        if self.nodes.is_empty() {
            self.anchor = id;
        }
        self.nodes.push(PoseGraphNode { id, pose, scan });
        id
    }

    pub fn push_edge(&mut self, edge: PoseGraphEdge) -> Result<(), GraphError> {
        for id in [edge.from, edge.to] {
            if self.node(id).is_none() {
                return Err(GraphError::UnknownNode(id));
            }
        }
        self.edges.push(edge);
        Ok(())
    }

    pub fn edge_count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub min_translation: f64,
    pub min_rotation: f64,
    pub matcher: MatcherConfig,
    /// sequential matches below this keep the odometry edge
    pub match_min_score: f64,
    pub loop_radius: f64,
    pub loop_min_score: f64,
    pub loop_exclude_recent: usize,
    pub loop_max_candidates: usize,
    pub odometry_information: [f64; 3],
    pub match_information: [f64; 3],
    pub optimizer: OptimizerConfig,
    /// optimize after this many new nodes (and always after a loop closure)
    pub optimize_every: usize,
    pub mode: MappingMode,
    pub map_resolution: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            min_translation: 0.2,
            min_rotation: 0.35,
            matcher: MatcherConfig::default(),
            match_min_score: 0.5,
            loop_radius: 2.0,
            loop_min_score: 0.6,
            loop_exclude_recent: 10,
            loop_max_candidates: 8,
            odometry_information: [50.0, 50.0, 100.0],
            match_information: [400.0, 400.0, 1000.0],
            optimizer: OptimizerConfig::default(),
            optimize_every: 5,
            mode: MappingMode::Synchronous,
            map_resolution: 0.05,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.min_translation > 0.0 && self.min_rotation > 0.0) {
            return Err("node spacing thresholds must be positive");
        }
        let m = &self.matcher;
        if [
            m.window_xy,
            m.window_theta,
            m.coarse_xy,
            m.coarse_theta,
            m.fine_xy,
            m.fine_theta,
            m.raster_resolution,
            m.raster_sigma,
        ]
        .iter()
        .any(|v| !(*v > 0.0))
        {
            return Err("scan matcher windows and resolutions must be positive");
        }
        if !(self.loop_radius > 0.0) || !(self.map_resolution > 0.0) {
            return Err("loop radius and map resolution must be positive");
        }
        if self.odometry_information.iter().chain(&self.match_information).any(|v| !(*v > 0.0)) {
            return Err("information diagonals must be positive");
        }
        if self.optimize_every == 0 {
            return Err("optimize_every must be at least 1");
        }
        Ok(())
    }

    fn scaled_match_information(&self, score: f64) -> [[f64; 3]; 3] {
        let d = self.match_information;
        diag_information([d[0] * score, d[1] * score, d[2] * score])
    }
}

/// Loop-closure edges for `node_id` against older nodes within the search radius.
pub fn detect_loop_closures(graph: &PoseGraph, node_id: u64, cfg: &GraphConfig) -> Vec<PoseGraphEdge> {
    let Some(node) = graph.node(node_id) else {
        return Vec::new();
    };
    let pos = graph.nodes.iter().position(|n| n.id == node_id).unwrap();
    let eligible = pos.saturating_sub(cfg.loop_exclude_recent);
    let mut cands: Vec<(f64, &PoseGraphNode)> = graph.nodes[..eligible]
        .iter()
        .map(|c| (c.pose.distance(&node.pose), c))
        .filter(|(d, _)| *d <= cfg.loop_radius)
        .collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    cands.truncate(cfg.loop_max_candidates);
    let mut out = Vec::new();
    for (_, c) in cands {
        let initial = c.pose.between(&node.pose);
        let Ok(m) = scan_match(&c.scan, &node.scan, &initial, &cfg.matcher) else {
            continue;
        };
        if m.score >= cfg.loop_min_score {
            if let Ok(e) = PoseGraphEdge::new(c.id, node.id, m.pose, cfg.scaled_match_information(m.score), EdgeKind::LoopClosure) {
                out.push(e);
            }
        }
    }
    out
}

/// Fresh grid with every node's scan ray-traced from its current pose.
pub fn render_map(graph: &PoseGraph, resolution: f64) -> OccupancyGrid {
    let center = graph.node(graph.anchor).map_or([0.0, 0.0], |n| [n.pose.x, n.pose.y]);
    let mut grid = OccupancyGrid::centered(center, resolution, 64);
    for n in &graph.nodes {
        grid.integrate_scan(&n.pose, &n.scan);
    }
    grid
}

/// What happened to one incoming scan.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AddReport {
    pub node: Option<u64>,
    pub match_score: Option<f64>,
    pub loop_closures: usize,
    pub optimized: Option<OptimizeReport>,
}

/// Incremental mapper state: the graph plus odometry accumulated since the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSlam {
    pub cfg: GraphConfig,
    pub graph: PoseGraph,
    pub pending: Pose2,
    pub since_optimize: usize,
}

impl GraphSlam {
    pub fn new(cfg: GraphConfig) -> Self {
        Self {
            cfg,
            graph: PoseGraph::default(),
            pending: Pose2::IDENTITY,
            since_optimize: 0,
        }
    }

    /// Feed one odometry increment and the scan taken at the end of it.
    pub fn add_scan(&mut self, odom_delta: &Pose2, scan: &LaserScan) -> Result<AddReport, GraphError> {
        let mut report = AddReport::default();
        if self.graph.nodes.is_empty() {
            report.node = Some(self.graph.push_node(Pose2::IDENTITY, scan.clone()));
            self.pending = Pose2::IDENTITY;
            return Ok(report);
        }
        self.pending = self.pending.compose(odom_delta);
        if self.pending.translation_norm() < self.cfg.min_translation && self.pending.theta.abs() < self.cfg.min_rotation {
            return Ok(report);
        }
        let prev = self.graph.nodes.last().unwrap().clone();
        let rel = std::mem::replace(&mut self.pending, Pose2::IDENTITY);
        let id = self.graph.push_node(prev.pose.compose(&rel), scan.clone());
        report.node = Some(id);
        let edge = match scan_match(&prev.scan, scan, &rel, &self.cfg.matcher) {
            Ok(m) if m.score >= self.cfg.match_min_score => {
                report.match_score = Some(m.score);
                PoseGraphEdge::new(prev.id, id, m.pose, self.cfg.scaled_match_information(m.score), EdgeKind::ScanMatch)?
            }
            other => {
                report.match_score = other.ok().map(|m| m.score);
                PoseGraphEdge::new(
                    prev.id,
                    id,
                    rel,
                    diag_information(self.cfg.odometry_information),
                    EdgeKind::Odometry,
                )?
            }
        };
        self.graph.push_edge(edge)?;
        let closures = detect_loop_closures(&self.graph, id, &self.cfg);
        report.loop_closures = closures.len();
        for e in closures {
            self.graph.push_edge(e)?;
        }
        self.since_optimize += 1;
        if report.loop_closures > 0 || self.since_optimize >= self.cfg.optimize_every {
            report.optimized = Some(self.optimize()?);
        }
        Ok(report)
    }

    pub fn optimize(&mut self) -> Result<OptimizeReport, GraphError> {
        self.since_optimize = 0;
        optimize(&mut self.graph, &self.cfg.optimizer)
    }

    /// Latest node estimate composed with odometry not yet turned into a node.
    pub fn current_pose(&self) -> Pose2 {
        self.graph.nodes.last().map_or(Pose2::IDENTITY, |n| n.pose).compose(&self.pending)
    }

    pub fn render(&self) -> OccupancyGrid {
        render_map(&self.graph, self.cfg.map_resolution)
    }

    /// (timestamp, pose) for every node.
    pub fn trajectory(&self) -> Vec<(f64, Pose2)> {
        self.graph.nodes.iter().map(|n| (n.scan.timestamp, n.pose)).collect()
    }
}

#[cfg(test)]
mod tests;
