//! Two-level correlative scan matcher. The reference scan is drawn as a
//! polyline into a Gaussian likelihood raster; candidate poses on a discrete
//! window are scored by looking query endpoints up in that raster.

use crate::geometry::{wrap_angle, Pose2};
use crate::grid::squared_edt;
use crate::par;
use crate::world::LaserScan;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("query scan has no returns")]
    EmptyQuery,
    #[error("reference scan has no returns")]
    EmptyReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub window_xy: f64,
    pub window_theta: f64,
    pub coarse_xy: f64,
    pub coarse_theta: f64,
    pub fine_xy: f64,
    pub fine_theta: f64,
    pub raster_resolution: f64,
    pub raster_sigma: f64,
    /// consecutive reference points farther apart than this are not joined
    pub link_gap: f64,
    /// penalty weights on squared deviation from the initial guess (1/m², 1/rad²)
    pub prior_xy: f64,
    pub prior_theta: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            window_xy: 0.3,
            window_theta: 15f64.to_radians(),
            coarse_xy: 0.05,
            coarse_theta: 1f64.to_radians(),
            fine_xy: 0.01,
            fine_theta: 0.25f64.to_radians(),
            raster_resolution: 0.02,
            raster_sigma: 0.05,
            link_gap: 0.3,
            prior_xy: 1.0,
            prior_theta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    /// query sensor frame expressed in the reference sensor frame
    pub pose: Pose2,
    /// mean raster value at the query endpoints, in [0, 1]
    pub score: f64,
}

struct Raster {
    res: f64,
    min: [f64; 2],
    w: usize,
    h: usize,
    v: Vec<f32>,
}

impl Raster {
    fn build(points: &[Option<[f64; 2]>], wraps: bool, margin: f64, cfg: &MatcherConfig) -> Raster {
        let res = cfg.raster_resolution;
        let valid: Vec<[f64; 2]> = points.iter().flatten().copied().collect();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &valid {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let min = [lo[0] - margin, lo[1] - margin];
        let w = ((hi[0] + margin - min[0]) / res).ceil() as usize + 1;
        let h = ((hi[1] + margin - min[1]) / res).ceil() as usize + 1;
        let mut seed = vec![false; w * h];
        let mut mark = |p: [f64; 2]| {
            let i = ((p[0] - min[0]) / res).floor() as usize;
            let j = ((p[1] - min[1]) / res).floor() as usize;
            seed[j * w + i] = true;
        };
        for p in &valid {
            mark(*p);
        }
        let n = points.len();
        let links = if wraps { n } else { n.saturating_sub(1) };
        for k in 0..links {
            let (Some(a), Some(b)) = (points[k], points[(k + 1) % n]) else {
                continue;
            };
            let d = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            if d > cfg.link_gap {
                continue;
            }
            let steps = (d / (0.5 * res)).ceil() as usize;
            for s in 1..steps {
                let t = s as f64 / steps as f64;
                mark([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        let d2 = squared_edt(&seed, w, h);
        let k = res * res / (2.0 * cfg.raster_sigma * cfg.raster_sigma);
        let v = d2.iter().map(|d| (-(d * k)).exp() as f32).collect();
        Raster { res, min, w, h, v }
    }

    /// Bilinear lookup between cell centers; zero outside.
    #[inline]
    fn value(&self, x: f64, y: f64) -> f64 {
        let gx = (x - self.min[0]) / self.res - 0.5;
        let gy = (y - self.min[1]) / self.res - 0.5;
        if !(gx >= 0.0 && gy >= 0.0) {
            return 0.0;
        }
        let (i, j) = (gx as usize, gy as usize);
        if i + 1 >= self.w || j + 1 >= self.h {
            return 0.0;
        }
        let (fx, fy) = (gx - i as f64, gy - j as f64);
        let k = j * self.w + i;
        let v00 = self.v[k] as f64;
        let v10 = self.v[k + 1] as f64;
        let v01 = self.v[k + self.w] as f64;
        let v11 = self.v[k + self.w + 1] as f64;
        (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
    }
}

struct Candidate {
    pose: Pose2,
    raw: f64,
    total: f64,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    a.total > b.total
}

fn search(
    raster: &Raster,
    pts: &[[f64; 2]],
    center: &Pose2,
    initial: &Pose2,
    xy: (f64, usize),
    th: (f64, usize),
    cfg: &MatcherConfig,
) -> Candidate {
    let (step, nxy) = xy;
    let (tstep, nth) = th;
    let n_theta = 2 * nth + 1;
    let inv = 1.0 / pts.len() as f64;
    let per_angle = par::map_range(n_theta, |a| {
        let theta = center.theta + (a as f64 - nth as f64) * tstep;
        let (s, c) = theta.sin_cos();
        let rotated: Vec<[f64; 2]> = pts.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();
        let mut best: Option<Candidate> = None;
        for iy in 0..=2 * nxy {
            let dy = center.y + (iy as f64 - nxy as f64) * step;
            for ix in 0..=2 * nxy {
                let dx = center.x + (ix as f64 - nxy as f64) * step;
                let raw = rotated.iter().map(|p| raster.value(p[0] + dx, p[1] + dy)).sum::<f64>() * inv;
                let (ex, ey, et) = (dx - initial.x, dy - initial.y, wrap_angle(theta - initial.theta));
                let total = raw * (-(cfg.prior_xy * (ex * ex + ey * ey) + cfg.prior_theta * et * et)).exp();
                let cand = Candidate {
                    pose: Pose2::new(dx, dy, theta),
                    raw,
                    total,
                };
                if best.as_ref().is_none_or(|b| better(&cand, b)) {
                    best = Some(cand);
                }
            }
        }
        best.unwrap()
    });
    // fold in angle order so ties resolve identically in both execution modes
    per_angle.into_iter().reduce(|b, c| if better(&c, &b) { c } else { b }).unwrap()
}

/// Align `query` to `reference`, searching a window around `initial` (query
/// pose in the reference frame). Returns the best pose and its raw score.
pub fn scan_match(reference: &LaserScan, query: &LaserScan, initial: &Pose2, cfg: &MatcherConfig) -> Result<MatchResult, MatchError> {
    let pts = query.points();
    if pts.is_empty() {
        return Err(MatchError::EmptyQuery);
    }
    let ref_pts = reference.points_with_gaps();
    if reference.valid_count() == 0 {
        return Err(MatchError::EmptyReference);
    }
    let wraps = (reference.angle_increment * ref_pts.len() as f64 - std::f64::consts::TAU).abs() < 1e-6;
    let raster = Raster::build(&ref_pts, wraps, 3.0 * cfg.raster_sigma + cfg.raster_resolution, cfg);
    let nxy = (cfg.window_xy / cfg.coarse_xy).round() as usize;
    let nth = (cfg.window_theta / cfg.coarse_theta).round() as usize;
    let coarse = search(&raster, &pts, initial, initial, (cfg.coarse_xy, nxy), (cfg.coarse_theta, nth), cfg);
    let fxy = (cfg.coarse_xy / cfg.fine_xy).round() as usize;
    let fth = (cfg.coarse_theta / cfg.fine_theta).round() as usize;
    let fine = search(&raster, &pts, &coarse.pose, initial, (cfg.fine_xy, fxy), (cfg.fine_theta, fth), cfg);
    let best = if better(&fine, &coarse) { fine } else { coarse };
    Ok(MatchResult {
        pose: best.pose,
        score: best.raw.clamp(0.0, 1.0),
    })
}
