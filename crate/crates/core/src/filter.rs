//! Rao-Blackwellized particle filter SLAM (GMapping-style): particles sample the
//! trajectory, each carries its own occupancy grid, proposals are refined by a
//! hill-climbing scan match and map updates are gated on match confidence.

use crate::geometry::Pose2;
use crate::grid::{DistanceField, OccupancyGrid};
use crate::par;
use crate::world::{derive_seed, LaserScan, SimRng};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid filter config: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub particle_count: usize,
    /// resample when N_eff < resample_threshold · N
    pub resample_threshold: f64,
    /// scans are written into a particle's map only at or above this score
    pub match_confidence_min: f64,
    /// translation noise per meter translated
    pub srr: f64,
    /// rotation noise per meter translated
    pub srt: f64,
    /// translation noise per radian rotated
    pub str_: f64,
    /// rotation noise per radian rotated
    pub stt: f64,
    pub resolution: f64,
    pub initial_size: usize,
    pub sigma_hit: f64,
    pub outlier: f64,
    /// beam subsampling for weighting and the confidence score
    pub beam_stride: usize,
    /// beam subsampling for the hill-climbing match
    pub match_stride: usize,
    /// log-likelihoods are divided by this before weighting
    pub weight_gain: f64,
    pub refine: bool,
    pub update_min_trans: f64,
    pub update_min_rot: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particle_count: 30,
            resample_threshold: 0.5,
            match_confidence_min: 0.55,
            srr: 0.1,
            srt: 0.2,
            str_: 0.1,
            stt: 0.2,
            resolution: 0.05,
            initial_size: 200,
            sigma_hit: 0.1,
            outlier: 0.05,
            beam_stride: 4,
            match_stride: 2,
            weight_gain: 3.0,
            refine: true,
            update_min_trans: 0.15,
            update_min_rot: 0.15,
            seed: 1,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.particle_count == 0 {
            return Err(FilterError::Config("particle_count must be at least 1"));
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return Err(FilterError::Config("resample_threshold must be in (0, 1]"));
        }
        if [self.srr, self.srt, self.str_, self.stt].iter().any(|s| !(*s >= 0.0)) {
            return Err(FilterError::Config("motion noise must be non-negative"));
        }
        if !(self.resolution > 0.0) || self.initial_size == 0 {
            return Err(FilterError::Config("grid resolution and size must be positive"));
        }
        if !(self.sigma_hit > 0.0) || !(self.outlier > 0.0 && self.outlier < 1.0) {
            return Err(FilterError::Config("sigma_hit > 0 and outlier in (0, 1) required"));
        }
        if self.beam_stride == 0 || self.match_stride == 0 || !(self.weight_gain > 0.0) {
            return Err(FilterError::Config("strides and weight_gain must be positive"));
        }
        Ok(())
    }

    pub fn likelihood_model(&self) -> LikelihoodModel {
        LikelihoodModel {
            sigma_hit: self.sigma_hit,
            outlier: self.outlier,
            stride: self.beam_stride,
        }
    }
}

/// Likelihood-field sensor model: p(beam) = (1 − outlier)·exp(−d²/2σ²) + outlier,
/// d = distance from the endpoint to the nearest cell with positive evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodModel {
    pub sigma_hit: f64,
    pub outlier: f64,
    pub stride: usize,
}

impl Default for LikelihoodModel {
    fn default() -> Self {
        FilterConfig::default().likelihood_model()
    }
}

/// A grid with its precomputed distance field.
pub struct LikelihoodField<'a> {
    grid: &'a OccupancyGrid,
    dist: Option<DistanceField>,
    model: LikelihoodModel,
}

impl<'a> LikelihoodField<'a> {
    pub fn new(grid: &'a OccupancyGrid, model: LikelihoodModel) -> Self {
        Self {
            grid,
            dist: grid.distance_field(0.0),
            model,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_none()
    }

    /// Per-beam probability, or `None` when the endpoint lies in unexplored space
    /// (unknown cell away from any mapped structure, or outside the grid).
    fn beam(&self, pose: &Pose2, local: [f64; 2]) -> Option<f64> {
        let dist = self.dist.as_ref()?;
        let (i, j) = self.grid.world_to_cell_i(pose.transform_point(local));
        if !self.grid.in_bounds(i, j) {
            return None;
        }
        let (i, j) = (i as usize, j as usize);
        let d = dist.at(i, j) as f64;
        let known = self.grid.get(i, j) != 0.0 || d <= 3.0 * self.model.sigma_hit;
        known.then(|| {
            let s = self.model.sigma_hit;
            (1.0 - self.model.outlier) * (-d * d / (2.0 * s * s)).exp() + self.model.outlier
        })
    }

    /// Normalized match score in (0, 1]: geometric mean of the per-beam
    /// probabilities over subsampled beams that land in explored space.
    pub fn score(&self, pose: &Pose2, points: &[[f64; 2]]) -> f64 {
        if self.dist.is_none() {
            return 1.0;
        }
        let (mut sum, mut n) = (0.0, 0usize);
        for p in points.iter().step_by(self.model.stride) {
            if let Some(b) = self.beam(pose, *p) {
                sum += b.ln();
                n += 1;
            }
        }
        if n == 0 {
            1.0
        } else {
            (sum / n as f64).exp()
        }
    }

    /// Σ ln p over subsampled beams, unexplored beams counting as outliers.
    pub fn log_likelihood(&self, pose: &Pose2, points: &[[f64; 2]], stride: usize) -> f64 {
        if self.dist.is_none() {
            return 0.0;
        }
        points
            .iter()
            .step_by(stride)
            .map(|p| self.beam(pose, *p).unwrap_or(self.model.outlier).ln())
            .sum()
    }

    fn objective(&self, pose: &Pose2, points: &[[f64; 2]], stride: usize) -> f64 {
        points
            .iter()
            .step_by(stride)
            .map(|p| self.beam(pose, *p).unwrap_or(self.model.outlier))
            .sum()
    }

    /// Greedy coordinate hill climb; a move is taken only on strict improvement.
    pub fn hill_climb(&self, start: Pose2, points: &[[f64; 2]], stride: usize) -> Pose2 {
        if self.dist.is_none() || points.is_empty() {
            return start;
        }
        let mut best = start;
        let mut best_s = self.objective(&best, points, stride);
        let (mut lin, mut ang) = (0.05, 0.05);
        for _ in 0..5 {
            for _ in 0..50 {
                let mut improved = false;
                for (dx, dy, dt) in [
                    (lin, 0.0, 0.0),
                    (-lin, 0.0, 0.0),
                    (0.0, lin, 0.0),
                    (0.0, -lin, 0.0),
                    (0.0, 0.0, ang),
                    (0.0, 0.0, -ang),
                ] {
                    let cand = Pose2::new(best.x + dx, best.y + dy, best.theta + dt);
                    let s = self.objective(&cand, points, stride);
                    if s > best_s {
                        best = cand;
                        best_s = s;
                        improved = true;
                    }
                }
                if !improved {
                    break;
                }
            }
            lin *= 0.5;
            ang *= 0.5;
        }
        best
    }
}

/// Likelihood-field score of `scan` taken at `pose` against `grid`; 1.0 for a
/// grid without occupied evidence.
pub fn scan_likelihood(grid: &OccupancyGrid, pose: &Pose2, scan: &LaserScan, model: &LikelihoodModel) -> f64 {
    LikelihoodField::new(grid, *model).score(pose, &scan.points())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub pose: Pose2,
    pub weight: f64,
    pub grid: OccupancyGrid,
    pub trajectory: Vec<Pose2>,
    /// match score of the most recent update
    pub last_score: f64,
    log_lik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub cfg: FilterConfig,
    pub particles: Vec<Particle>,
    /// timestamps shared by every particle trajectory
    pub stamps: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub neff: f64,
    pub resampled: bool,
    /// number of particles whose map took the scan
    pub integrated: usize,
    /// every particle had zero likelihood; weights were reset
    pub lost: bool,
}

pub fn rbpf_init(cfg: &FilterConfig, start: Pose2) -> Result<FilterState, FilterError> {
    cfg.validate()?;
    let n = cfg.particle_count;
    let grid = OccupancyGrid::centered([start.x, start.y], cfg.resolution, cfg.initial_size);
    let p = Particle {
        pose: start,
        weight: 1.0 / n as f64,
        grid,
        trajectory: Vec::new(),
        last_score: 1.0,
        log_lik: 0.0,
    };
    Ok(FilterState {
        cfg: cfg.clone(),
        particles: vec![p; n],
        stamps: Vec::new(),
        step: 0,
    })
}

/// Motion model standard deviations (translation, rotation) for one odometry increment.
fn motion_sigmas(delta: &Pose2, cfg: &FilterConfig) -> (f64, f64) {
    let t = delta.translation_norm();
    let r = delta.theta.abs();
    (cfg.srr * t + cfg.str_ * r, cfg.stt * r + cfg.srt * t)
}

fn sample_motion(delta: &Pose2, sigmas: (f64, f64), rng: &mut SimRng) -> Pose2 {
    let (sxy, sth) = sigmas;
    let n = Normal::new(0.0, 1.0).unwrap();
    let (ex, ey, et): (f64, f64, f64) = (n.sample(rng), n.sample(rng), n.sample(rng));
    Pose2::new(delta.x + sxy * ex, delta.y + sxy * ey, delta.theta + sth * et)
}

/// Systematic resampling: one uniform offset `u0` ∈ [0, 1), N evenly spaced pointers.
pub fn systematic_resample(weights: &[f64], u0: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut c = weights[0] / total;
    let mut i = 0;
    for m in 0..n {
        let u = (u0 + m as f64) / n as f64;
        while u > c && i + 1 < n {
            i += 1;
            c += weights[i] / total;
        }
        out.push(i);
    }
    out
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// One filter step with odometry `odom_delta` (body frame) and the scan taken at the new pose.
pub fn rbpf_update(state: &mut FilterState, odom_delta: &Pose2, scan: &LaserScan) -> UpdateReport {
    state.step += 1;
    let cfg = state.cfg.clone();
    let step = state.step;
    let points = scan.points();
    let model = cfg.likelihood_model();
    let sigmas = motion_sigmas(odom_delta, &cfg);
    // a deterministic proposal leaves nothing for the matcher to search over
    let refine = cfg.refine && (sigmas.0 > 0.0 || sigmas.1 > 0.0);

    par::for_each_mut(&mut state.particles, |idx, p| {
        let mut rng = SimRng::seed_from_u64(derive_seed(&[cfg.seed, step, idx as u64]));
        let proposal = p.pose.compose(&sample_motion(odom_delta, sigmas, &mut rng));
        let field = LikelihoodField::new(&p.grid, model);
        let pose = if refine {
            field.hill_climb(proposal, &points, cfg.match_stride)
        } else {
            proposal
        };
        p.pose = pose;
        p.last_score = field.score(&pose, &points);
        p.log_lik = field.log_likelihood(&pose, &points, cfg.beam_stride);
    });

    let logw: Vec<f64> = state
        .particles
        .iter()
        .map(|p| {
            let l = p.weight.ln() + p.log_lik / cfg.weight_gain;
            if l.is_nan() {
                f64::NEG_INFINITY
            } else {
                l
            }
        })
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = state.particles.len();
    let lost = !max.is_finite();
    if lost {
        for p in &mut state.particles {
            p.weight = 1.0 / n as f64;
        }
    } else {
        let ws: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = ws.iter().sum();
        for (p, w) in state.particles.iter_mut().zip(ws) {
            p.weight = w / total;
        }
    }

    let gate = cfg.match_confidence_min;
    let integrated = if lost {
        0
    } else {
        par::for_each_mut(&mut state.particles, |_, p| {
            if p.last_score >= gate {
                p.grid.integrate_scan(&p.pose, scan);
            }
        });
        state.particles.iter().filter(|p| p.last_score >= gate).count()
    };
    for p in &mut state.particles {
        p.trajectory.push(p.pose);
    }
    state.stamps.push(scan.timestamp);

    let weights: Vec<f64> = state.particles.iter().map(|p| p.weight).collect();
    let neff = effective_sample_size(&weights);
    let resampled = neff < cfg.resample_threshold * n as f64;
    if resampled {
        let mut rng = SimRng::seed_from_u64(derive_seed(&[cfg.seed, step, u64::MAX]));
        let idx = systematic_resample(&weights, rng.random::<f64>());
        let mut next: Vec<Particle> = idx.iter().map(|i| state.particles[*i].clone()).collect();
        for p in &mut next {
            p.weight = 1.0 / n as f64;
        }
        state.particles = next;
    }
    UpdateReport {
        neff,
        resampled,
        integrated,
        lost,
    }
}

/// Index of the highest-weight particle; ties go to the lowest index.
pub fn best_index(state: &FilterState) -> usize {
    let mut best = 0;
    for (i, p) in state.particles.iter().enumerate() {
        if p.weight > state.particles[best].weight {
            best = i;
        }
    }
    best
}

pub fn best_map(state: &FilterState) -> (&OccupancyGrid, &[Pose2]) {
    let p = &state.particles[best_index(state)];
    (&p.grid, &p.trajectory)
}

/// Filter plus update throttling: odometry is accumulated between scans and a
/// filter step runs only once the robot has moved far enough (the first scan
/// always runs).
#[derive(Debug, Clone)]
pub struct FilterSlam {
    pub state: FilterState,
    pending: Pose2,
    started: bool,
}

impl FilterSlam {
    pub fn new(cfg: &FilterConfig, start: Pose2) -> Result<Self, FilterError> {
        Ok(Self {
            state: rbpf_init(cfg, start)?,
            pending: Pose2::IDENTITY,
            started: false,
        })
    }

    pub fn process(&mut self, odom_delta: &Pose2, scan: &LaserScan) -> Option<UpdateReport> {
        self.pending = self.pending.compose(odom_delta);
        let cfg = &self.state.cfg;
        let due =
            !self.started || self.pending.translation_norm() >= cfg.update_min_trans || self.pending.theta.abs() >= cfg.update_min_rot;
        if !due {
            return None;
        }
        self.started = true;
        let delta = std::mem::replace(&mut self.pending, Pose2::IDENTITY);
        Some(rbpf_update(&mut self.state, &delta, scan))
    }

    /// Best particle pose plus odometry not yet consumed by the filter.
    pub fn current_pose(&self) -> Pose2 {
        self.state.particles[best_index(&self.state)].pose.compose(&self.pending)
    }

    pub fn best_map(&self) -> (&OccupancyGrid, &[Pose2]) {
        best_map(&self.state)
    }

    pub fn stamps(&self) -> &[f64] {
        &self.state.stamps
    }
}
