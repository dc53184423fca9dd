//! Ground-truth comparisons: occupancy agreement, trajectory error, transform error.

use crate::geometry::{wrap_angle, Pose2};
use crate::grid::{CellClass, OccupancyGrid};
use crate::world::{Environment, Segment};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("no estimated pose has a ground-truth sample within {0} s")]
    NoOverlap(f64),
}

/// Default timestamp tolerance for trajectory association.
pub const TIME_TOLERANCE: f64 = 0.05;

/// Does the segment cross the axis-aligned box? (Liang-Barsky clip.)
fn segment_hits_box(s: &Segment, lo: [f64; 2], hi: [f64; 2]) -> bool {
    let (x0, y0) = (s.a[0], s.a[1]);
    let (dx, dy) = (s.b[0] - s.a[0], s.b[1] - s.a[1]);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, x0 - lo[0]), (dx, hi[0] - x0), (-dy, y0 - lo[1]), (dy, hi[1] - y0)] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// Ground truth on `grid`'s lattice: occupied where a wall crosses the cell,
/// free elsewhere. `frame` is the pose of the grid's world frame in the
/// environment.
pub fn ground_truth(env: &Environment, grid: &OccupancyGrid, frame: &Pose2) -> Vec<CellClass> {
    let to_grid = frame.inverse();
    let walls: Vec<Segment> = env.walls().iter().map(|w| w.transformed(&to_grid)).collect();
    let mut out = vec![CellClass::Free; grid.width() * grid.height()];
    let res = grid.resolution();
    // walls are rasterized in the grid's own cell frame
    let origin_inv = grid.origin().inverse();
    for w in &walls {
        let local = w.transformed(&origin_inv);
        let (lo_x, hi_x) = (local.a[0].min(local.b[0]), local.a[0].max(local.b[0]));
        let (lo_y, hi_y) = (local.a[1].min(local.b[1]), local.a[1].max(local.b[1]));
        let i0 = ((lo_x / res).floor() as i64).max(0);
        let i1 = ((hi_x / res).floor() as i64).min(grid.width() as i64 - 1);
        let j0 = ((lo_y / res).floor() as i64).max(0);
        let j1 = ((hi_y / res).floor() as i64).min(grid.height() as i64 - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let lo = [i as f64 * res, j as f64 * res];
                if segment_hits_box(&local, lo, [lo[0] + res, lo[1] + res]) {
                    out[j as usize * grid.width() + i as usize] = CellClass::Occupied;
                }
            }
        }
    }
    out
}

/// Fraction of observed cells whose class matches the ground truth; 0 when
/// nothing is observed.
pub fn agreement(grid: &OccupancyGrid, env: &Environment, frame: &Pose2) -> f64 {
    let truth = ground_truth(env, grid, frame);
    let (mut seen, mut same) = (0usize, 0usize);
    for (c, t) in grid.ternary().iter().zip(&truth) {
        if *c != CellClass::Unknown {
            seen += 1;
            same += (c == t) as usize;
        }
    }
    if seen == 0 {
        0.0
    } else {
        same as f64 / seen as f64
    }
}

/// Positional RMSE of `est` against `truth`, pairing each estimate with the
/// truth sample nearest in time (within `tolerance`). Both are (time, pose)
/// in one shared frame; `truth` must be sorted by time.
pub fn ate(truth: &[(f64, Pose2)], est: &[(f64, Pose2)], tolerance: f64) -> Result<f64, MetricsError> {
    if truth.is_empty() || est.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (t, p) in est {
        let k = truth.partition_point(|(s, _)| s < t);
        let best = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&i| i < truth.len())
            .min_by(|&a, &b| (truth[a].0 - t).abs().total_cmp(&(truth[b].0 - t).abs()));
        let Some(i) = best else { continue };
        if (truth[i].0 - t).abs() <= tolerance {
            let q = truth[i].1;
            sum += (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::NoOverlap(tolerance));
    }
    Ok((sum / n as f64).sqrt())
}

/// (translation m, rotation deg) between an estimated and a true transform.
pub fn transform_error(est: &Pose2, truth: &Pose2) -> (f64, f64) {
    (est.distance(truth), wrap_angle(est.theta - truth.theta).abs().to_degrees())
}

/// Intersection over union of the observed areas of two maps, with `b_to_a`
/// mapping b's frame into a's.
pub fn observed_overlap(a: &OccupancyGrid, b: &OccupancyGrid, b_to_a: &Pose2) -> f64 {
    let count_a = a.ternary().iter().filter(|c| **c != CellClass::Unknown).count();
    let (mut count_b, mut both) = (0usize, 0usize);
    for j in 0..b.height() {
        for i in 0..b.width() {
            if b.class_at(i, j) == CellClass::Unknown {
                continue;
            }
            count_b += 1;
            if let Some((ai, aj)) = a.world_to_cell(b_to_a.transform_point(b.cell_center(i, j))) {
                both += (a.class_at(ai, aj) != CellClass::Unknown) as usize;
            }
        }
    }
    let union = count_a + count_b - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LOG_ODDS_MAX;

    fn square() -> Environment {
        Environment::new(vec![
            Segment::new(0.0, 0.0, 2.0, 0.0),
            Segment::new(2.0, 0.0, 2.0, 2.0),
            Segment::new(2.0, 2.0, 0.0, 2.0),
            Segment::new(0.0, 2.0, 0.0, 0.0),
        ])
        .unwrap()
    }

    fn traj(n: usize, dx: f64) -> Vec<(f64, Pose2)> {
        (0..n)
            .map(|k| (k as f64 * 0.1, Pose2::new(k as f64 * 0.05 + dx, 0.0, 0.0)))
            .collect()
    }

    #[test]
    fn ate_of_identical_and_shifted() {
        let t = traj(50, 0.0);
        assert_eq!(ate(&t, &t, TIME_TOLERANCE).unwrap(), 0.0);
        let s = traj(50, 0.1);
        assert!((ate(&t, &s, TIME_TOLERANCE).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(ate(&[], &t, TIME_TOLERANCE), Err(MetricsError::EmptyTrajectory));
        let late: Vec<_> = t.iter().map(|(s, p)| (s + 100.0, *p)).collect();
        assert!(matches!(ate(&t, &late, TIME_TOLERANCE), Err(MetricsError::NoOverlap(_))));
    }

    #[test]
    fn ate_pairs_by_nearest_time() {
        let t = traj(50, 0.0);
        // estimates 0.03 s late still pair with their own sample
        let e: Vec<_> = t.iter().map(|(s, p)| (s + 0.03, *p)).collect();
        assert_eq!(ate(&t, &e, TIME_TOLERANCE).unwrap(), 0.0);
    }

    #[test]
    fn ground_truth_marks_cells_crossed_by_walls() {
        let env = square();
        let g = OccupancyGrid::new(0.1, 30, 30, Pose2::new(-0.5, -0.5, 0.0));
        let t = ground_truth(&env, &g, &Pose2::IDENTITY);
        // every densely sampled wall point lands in an occupied cell
        for w in env.walls() {
            for k in 0..=2000 {
                let f = k as f64 / 2000.0;
                let (i, j) = g
                    .world_to_cell([w.a[0] + f * (w.b[0] - w.a[0]), w.a[1] + f * (w.b[1] - w.a[1])])
                    .unwrap();
                assert_eq!(t[g.index(i, j)], CellClass::Occupied);
            }
        }
        // and every occupied cell touches a wall
        let half_diag = 0.1 * std::f64::consts::SQRT_2 / 2.0 + 1e-9;
        for j in 0..30 {
            for i in 0..30 {
                if t[g.index(i, j)] == CellClass::Occupied {
                    assert!(env.clearance(g.cell_center(i, j)) <= half_diag);
                }
            }
        }
    }

    #[test]
    fn agreement_counts_only_observed_cells() {
        let mut g = OccupancyGrid::new(0.1, 30, 30, Pose2::new(-0.5, -0.5, 0.0));
        assert_eq!(agreement(&g, &square(), &Pose2::IDENTITY), 0.0);
        // one free cell inside, one wrongly occupied cell inside
        g.set(15, 15, -2.0);
        g.set(12, 12, LOG_ODDS_MAX);
        assert!((agreement(&g, &square(), &Pose2::IDENTITY) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn overlap_of_a_map_with_itself_is_one() {
        let mut g = OccupancyGrid::new(0.1, 20, 20, Pose2::IDENTITY);
        for i in 0..10 {
            g.set(i, 3, -2.0);
        }
        assert_eq!(observed_overlap(&g, &g, &Pose2::IDENTITY), 1.0);
        assert_eq!(observed_overlap(&g, &g, &Pose2::new(5.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn transform_error_wraps() {
        let (t, r) = transform_error(&Pose2::new(1.0, 0.0, 3.1), &Pose2::new(1.0, 0.1, -3.1));
        assert!((t - 0.1).abs() < 1e-12);
        assert!((r - (std::f64::consts::TAU - 6.2).to_degrees()).abs() < 1e-9);
    }
}
