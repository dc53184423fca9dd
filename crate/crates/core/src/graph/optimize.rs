//! Gauss-Newton / Levenberg-Marquardt over SE(2) pose graphs with the anchor
//! removed from the variables.

use super::{GraphError, PoseGraph, PoseGraphEdge};
use crate::geometry::{wrap_angle, Pose2};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// stop when the relative chi² decrease of an accepted step falls below this
    pub tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_chi2: f64,
    pub final_chi2: f64,
}

pub type Jacobian = Matrix3<f64>;

/// e = t2v(Z⁻¹ · (Xi⁻¹ · Xj)) with a wrapped angle component.
pub fn edge_error(xi: &Pose2, xj: &Pose2, z: &Pose2) -> Vector3<f64> {
    let (si, ci) = xi.theta.sin_cos();
    let (sz, cz) = z.theta.sin_cos();
    let dx = xj.x - xi.x;
    let dy = xj.y - xi.y;
    // Riᵀ (tj − ti) − tz
    let lx = ci * dx + si * dy - z.x;
    let ly = -si * dx + ci * dy - z.y;
    Vector3::new(cz * lx + sz * ly, -sz * lx + cz * ly, wrap_angle(xj.theta - xi.theta - z.theta))
}

/// Analytic Jacobians of [`edge_error`] with respect to xi and xj.
pub fn edge_jacobians(xi: &Pose2, xj: &Pose2, z: &Pose2) -> (Jacobian, Jacobian) {
    let (si, ci) = xi.theta.sin_cos();
    let (sz, cz) = z.theta.sin_cos();
    let dx = xj.x - xi.x;
    let dy = xj.y - xi.y;
    // RzᵀRiᵀ
    let r = Matrix3::new(
        cz * ci - sz * si,
        cz * si + sz * ci,
        0.0,
        -sz * ci - cz * si,
        -sz * si + cz * ci,
        0.0,
        0.0,
        0.0,
        1.0,
    );
    // d(Riᵀ)/dθi · (tj − ti)
    let gx = -si * dx + ci * dy;
    let gy = -ci * dx - si * dy;
    let mut a = -r;
    a[(0, 2)] = cz * gx + sz * gy;
    a[(1, 2)] = -sz * gx + cz * gy;
    a[(2, 2)] = -1.0;
    (a, r)
}

pub fn edge_chi2(e: &PoseGraphEdge, xi: &Pose2, xj: &Pose2) -> f64 {
    let r = edge_error(xi, xj, &e.measurement);
    let om = e.information_matrix();
    (r.transpose() * om * r)[(0, 0)]
}

pub fn chi2(graph: &PoseGraph) -> f64 {
    let idx = graph.index_map();
    graph
        .edges
        .iter()
        .map(|e| edge_chi2(e, &graph.nodes[idx[&e.from]].pose, &graph.nodes[idx[&e.to]].pose))
        .sum()
}

fn chi2_of(graph: &PoseGraph, poses: &[Pose2], idx: &HashMap<u64, usize>) -> f64 {
    graph
        .edges
        .iter()
        .map(|e| edge_chi2(e, &poses[idx[&e.from]], &poses[idx[&e.to]]))
        .sum()
}

/// Every node reachable from the anchor through edges (either direction).
pub fn check_connected(graph: &PoseGraph) -> Result<(), GraphError> {
    let idx = graph.index_map();
    let anchor = *idx.get(&graph.anchor).ok_or(GraphError::UnknownNode(graph.anchor))?;
    let mut adj = vec![Vec::new(); graph.nodes.len()];
    for e in &graph.edges {
        let (a, b) = (
            *idx.get(&e.from).ok_or(GraphError::UnknownNode(e.from))?,
            *idx.get(&e.to).ok_or(GraphError::UnknownNode(e.to))?,
        );
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; graph.nodes.len()];
    seen[anchor] = true;
    let mut q = VecDeque::from([anchor]);
    while let Some(n) = q.pop_front() {
        for &m in &adj[n] {
            if !seen[m] {
                seen[m] = true;
                q.push_back(m);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(k) => Err(GraphError::Disconnected(graph.nodes[k].id)),
        None => Ok(()),
    }
}

/// Minimize Σ eᵀΩe over all non-anchor poses. Steps that do not reduce chi² are
/// rejected and retried with more damping, so chi² never increases.
pub fn optimize(graph: &mut PoseGraph, cfg: &OptimizerConfig) -> Result<OptimizeReport, GraphError> {
    check_connected(graph)?;
    let idx = graph.index_map();
    let anchor = idx[&graph.anchor];
    let n = graph.nodes.len();
    // variable slot for each node; the anchor has none
    let slot: Vec<Option<usize>> = (0..n)
        .map(|k| match k.cmp(&anchor) {
            std::cmp::Ordering::Less => Some(k),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(k - 1),
        })
        .collect();
    let dim = 3 * (n - 1);
    let mut poses: Vec<Pose2> = graph.nodes.iter().map(|nd| nd.pose).collect();
    let initial_chi2 = chi2_of(graph, &poses, &idx);
    let mut current = initial_chi2;
    let mut iterations = 0;
    let mut lambda = 0.0f64;
    if dim == 0 || current == 0.0 {
        return Ok(OptimizeReport {
            iterations,
            initial_chi2,
            final_chi2: current,
        });
    }
    for _ in 0..cfg.max_iterations {
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        for e in &graph.edges {
            let (i, j) = (idx[&e.from], idx[&e.to]);
            let r = edge_error(&poses[i], &poses[j], &e.measurement);
            let (ja, jb) = edge_jacobians(&poses[i], &poses[j], &e.measurement);
            let om = e.information_matrix();
            let blocks = [(slot[i], ja), (slot[j], jb)];
            for (sa, ja_) in &blocks {
                let Some(sa) = sa else { continue };
                let jt_om = ja_.transpose() * om;
                let g = jt_om * r;
                for k in 0..3 {
                    b[3 * sa + k] += g[k];
                }
                for (sb, jb_) in &blocks {
                    let Some(sb) = sb else { continue };
                    let blk = jt_om * jb_;
                    for r_ in 0..3 {
                        for c in 0..3 {
                            h[(3 * sa + r_, 3 * sb + c)] += blk[(r_, c)];
                        }
                    }
                }
            }
        }
        let mut accepted = None;
        let mut factored = false;
        for _ in 0..40 {
            let mut hd = h.clone();
            if lambda > 0.0 {
                for k in 0..dim {
                    hd[(k, k)] += lambda * (1.0 + h[(k, k)]);
                }
            }
            let Some(ch) = hd.cholesky() else {
                lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
                continue;
            };
            factored = true;
            let dx = ch.solve(&(-&b));
            let cand: Vec<Pose2> = (0..n)
                .map(|k| match slot[k] {
                    None => poses[k],
                    Some(s) => Pose2::new(poses[k].x + dx[3 * s], poses[k].y + dx[3 * s + 1], poses[k].theta + dx[3 * s + 2]),
                })
                .collect();
            let c = chi2_of(graph, &cand, &idx);
            if c < current {
                accepted = Some((cand, c));
                lambda = if lambda < 1e-9 { 0.0 } else { lambda / 10.0 };
                break;
            }
            lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
            if lambda > 1e12 {
                break;
            }
        }
        if !factored {
            return Err(GraphError::Singular);
        }
        let Some((cand, c)) = accepted else {
            // no damping level reduces chi² any further: at a minimum
            break;
        };
        iterations += 1;
        let rel = (current - c) / current;
        poses = cand;
        current = c;
        if rel < cfg.tolerance || current == 0.0 {
            break;
        }
    }
    for (nd, p) in graph.nodes.iter_mut().zip(poses) {
        if nd.id != graph.anchor {
            nd.pose = p;
        }
    }
    Ok(OptimizeReport {
        iterations,
        initial_chi2,
        final_chi2: current,
    })
}
