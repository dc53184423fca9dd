//! Ground-truth world: wall-segment environments, robot body kinematics and
//! synthetic lidar / IMU / odometry measurements.

use crate::geometry::{wrap_angle, Pose2, Twist2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

/// Deterministic RNG used for every stochastic measurement.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Mix several integers into one seed (splitmix64 finalizer), for independent
/// per-particle or per-step RNG streams.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

pub const GRAVITY: f64 = 9.81;
pub const DEFAULT_BODY_RADIUS: f64 = 0.15;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("segment {index} has zero length")]
    ZeroLengthSegment { index: usize },
    #[error("environment has no wall segments")]
    Empty,
    #[error("reading environment file: {0}")]
    Io(#[from] std::io::Error),
    #[error("at least {needed} pose history entries required, got {got}")]
    ShortHistory { needed: usize, got: usize },
    #[error("invalid lidar config: {0}")]
    Lidar(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { a: [x1, y1], b: [x2, y2] }
    }

    pub fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let dx = self.b[0] - self.a[0];
        let dy = self.b[1] - self.a[1];
        let len2 = dx * dx + dy * dy;
        let u = if len2 > 0.0 {
            (((p[0] - self.a[0]) * dx + (p[1] - self.a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p[0] - (self.a[0] + u * dx)).hypot(p[1] - (self.a[1] + u * dy))
    }

    pub fn transformed(&self, pose: &Pose2) -> Segment {
        Segment {
            a: pose.transform_point(self.a),
            b: pose.transform_point(self.b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    walls: Vec<Segment>,
    bounds: Bounds,
}

impl Environment {
    pub fn new(walls: Vec<Segment>) -> Result<Self, WorldError> {
        if walls.is_empty() {
            return Err(WorldError::Empty);
        }
        if let Some(index) = walls.iter().position(|w| !(w.length() > 0.0)) {
            return Err(WorldError::ZeroLengthSegment { index });
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for w in &walls {
            for p in [w.a, w.b] {
                for k in 0..2 {
                    min[k] = min[k].min(p[k]);
                    max[k] = max[k].max(p[k]);
                }
            }
        }
        Ok(Self {
            walls,
            bounds: Bounds { min, max },
        })
    }

    /// Parse the plain-text format: one `x1 y1 x2 y2` segment per line, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let mut walls = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| WorldError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if vals.len() != 4 || vals.iter().any(|v| !v.is_finite()) {
                return Err(WorldError::Parse {
                    line: i + 1,
                    msg: format!("expected 4 finite numbers, got `{line}`"),
                });
            }
            walls.push(Segment::new(vals[0], vals[1], vals[2], vals[3]));
        }
        Self::new(walls)
    }

    pub fn walls(&self) -> &[Segment] {
        &self.walls
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    /// Distance from the ray origin to the nearest wall along `dir` (unit vector).
    pub fn raycast(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        self.walls
            .iter()
            .filter_map(|w| ray_segment(origin, dir, w))
            .min_by(|a, b| a.total_cmp(b))
    }

    pub fn clearance(&self, p: [f64; 2]) -> f64 {
        self.walls.iter().map(|w| w.distance_to(p)).fold(f64::INFINITY, f64::min)
    }
}

pub fn load_environment(path: impl AsRef<Path>) -> Result<Environment, WorldError> {
    Environment::parse(&std::fs::read_to_string(path)?)
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn ray_segment(o: [f64; 2], d: [f64; 2], w: &Segment) -> Option<f64> {
    let e = [w.b[0] - w.a[0], w.b[1] - w.a[1]];
    let denom = cross(d, e);
    if denom.abs() < 1e-14 {
        return None;
    }
    let ao = [w.a[0] - o[0], w.a[1] - o[1]];
    let t = cross(ao, e) / denom;
    let u = cross(ao, d) / denom;
    (t > 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Earliest parameter t ∈ [0, 1] at which a disk of `radius` moving from `p0` by `m`
/// first touches the segment while approaching it.
fn first_contact(p0: [f64; 2], m: [f64; 2], w: &Segment, radius: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if (0.0..=1.0).contains(&t) && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    let e = [w.b[0] - w.a[0], w.b[1] - w.a[1]];
    let len = e[0].hypot(e[1]);
    let u = [e[0] / len, e[1] / len];
    let n = [-u[1], u[0]];
    let s0 = (p0[0] - w.a[0]) * n[0] + (p0[1] - w.a[1]) * n[1];
    let mn = m[0] * n[0] + m[1] * n[1];
    for side in [1.0, -1.0] {
        // approaching this face means the signed offset shrinks toward the segment
        if side * mn < 0.0 {
            let t = (side * radius - s0) / mn;
            let p = [p0[0] + t * m[0], p0[1] + t * m[1]];
            let along = (p[0] - w.a[0]) * u[0] + (p[1] - w.a[1]) * u[1];
            if (0.0..=len).contains(&along) && side * s0 >= radius - 1e-12 {
                consider(t.max(0.0));
            }
        }
    }
    for c in [w.a, w.b] {
        let f = [p0[0] - c[0], p0[1] - c[1]];
        let qa = m[0] * m[0] + m[1] * m[1];
        let qb = 2.0 * (f[0] * m[0] + f[1] * m[1]);
        let qc = f[0] * f[0] + f[1] * f[1] - radius * radius;
        if qb >= 0.0 || qa == 0.0 {
            continue;
        }
        if qc <= 0.0 {
            // already touching and moving closer
            consider(0.0);
            continue;
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            consider((-qb - disc.sqrt()) / (2.0 * qa));
        }
    }
    best
}

/// Advance the true pose by one Euler step of a holonomic disk robot.
///
/// Translation stops at first contact with any wall (the disk never overlaps a
/// wall); rotation always applies.
pub fn step_true_pose(env: &Environment, pose: &Pose2, cmd: &Twist2, dt: f64, body_radius: f64) -> Pose2 {
    let (s, c) = pose.theta.sin_cos();
    let m = [(c * cmd.vx - s * cmd.vy) * dt, (s * cmd.vx + c * cmd.vy) * dt];
    let step = m[0].hypot(m[1]);
    let mut t = 1.0;
    if step > 0.0 {
        let p0 = [pose.x, pose.y];
        for w in env.walls() {
            if let Some(tc) = first_contact(p0, m, w, body_radius) {
                t = f64::min(t, tc);
            }
        }
        if t < 1.0 {
            // back off a hair so accumulated rounding never leaves the disk overlapping
            t = (t - 1e-9 / step).max(0.0);
        }
    }
    Pose2::new(pose.x + t * m[0], pose.y + t * m[1], pose.theta + cmd.wz * dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub beam_count: usize,
    pub angle_min: f64,
    pub angle_max: f64,
    pub range_min: f64,
    pub range_max: f64,
    /// Hz
    pub scan_rate: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        let beam_count = 360;
        Self {
            beam_count,
            angle_min: -PI,
            angle_max: PI - 2.0 * PI / beam_count as f64,
            range_min: 0.1,
            range_max: 12.0,
            scan_rate: 10.0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.beam_count < 2 {
            return Err(WorldError::Lidar("beam_count must be at least 2"));
        }
        if !(self.range_min < self.range_max) || self.range_min < 0.0 {
            return Err(WorldError::Lidar("range_min must be below range_max"));
        }
        if !(self.angle_min < self.angle_max) {
            return Err(WorldError::Lidar("angles must be strictly increasing"));
        }
        if !(self.scan_rate > 0.0) {
            return Err(WorldError::Lidar("scan_rate must be positive"));
        }
        Ok(())
    }

    pub fn angle_increment(&self) -> f64 {
        (self.angle_max - self.angle_min) / (self.beam_count - 1) as f64
    }
}

/// Serialize non-finite ranges as JSON `null`.
mod ranges_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(r: &[f64], s: S) -> Result<S::Ok, S::Error> {
        r.iter().map(|v| v.is_finite().then_some(*v)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

/// One lidar revolution. Beams without a return hold [`LaserScan::NO_RETURN`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    pub timestamp: f64,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_min: f64,
    pub range_max: f64,
    #[serde(with = "ranges_serde")]
    pub ranges: Vec<f64>,
}

impl LaserScan {
    pub const NO_RETURN: f64 = f64::INFINITY;

    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.angle_increment
    }

    pub fn is_return(&self, r: f64) -> bool {
        r.is_finite()
    }

    pub fn valid_count(&self) -> usize {
        self.ranges.iter().filter(|r| r.is_finite()).count()
    }

    /// Beam endpoints in the sensor frame, skipping beams with no return.
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.ranges
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_finite())
            .map(|(i, r)| {
                let (s, c) = self.beam_angle(i).sin_cos();
                [r * c, r * s]
            })
            .collect()
    }

    /// Same as [`points`](Self::points) but keeps beam order with `None` gaps.
    pub fn points_with_gaps(&self) -> Vec<Option<[f64; 2]>> {
        self.ranges
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.is_finite().then(|| {
                    let (s, c) = self.beam_angle(i).sin_cos();
                    [r * c, r * s]
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp: f64,
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
}

/// Measurement noise levels.
///
/// Odometry noise grows with the square root of the motion magnitude, so the
/// accumulated drift of a path is independent of how finely it is sampled:
/// translation std = `odom_trans_sigma`·√(distance),
/// heading std = `odom_rot_sigma`·√(|rotation| + 0.1·distance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub odom_trans_sigma: f64,
    pub odom_rot_sigma: f64,
    pub lidar_sigma: f64,
    pub imu_accel_sigma: f64,
    pub imu_gyro_sigma: f64,
    pub rng_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            odom_trans_sigma: 0.02,
            odom_rot_sigma: 0.02,
            lidar_sigma: 0.01,
            imu_accel_sigma: 0.05,
            imu_gyro_sigma: 0.005,
            rng_seed: 1,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            odom_trans_sigma: 0.0,
            odom_rot_sigma: 0.0,
            lidar_sigma: 0.0,
            imu_accel_sigma: 0.0,
            imu_gyro_sigma: 0.0,
            rng_seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        let sigmas = [
            self.odom_trans_sigma,
            self.odom_rot_sigma,
            self.lidar_sigma,
            self.imu_accel_sigma,
            self.imu_gyro_sigma,
        ];
        if sigmas.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err("noise sigmas must be finite and non-negative")
        }
    }

    pub fn rng(&self) -> SimRng {
        <SimRng as rand::SeedableRng>::seed_from_u64(self.rng_seed)
    }
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    // sigma is validated non-negative; always draw so RNG consumption does not depend on it
    let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
    z * sigma
}

pub fn simulate_scan(
    env: &Environment,
    pose: &Pose2,
    cfg: &LidarConfig,
    noise: &NoiseModel,
    timestamp: f64,
    rng: &mut impl Rng,
) -> LaserScan {
    let inc = cfg.angle_increment();
    let origin = [pose.x, pose.y];
    let ranges = (0..cfg.beam_count)
        .map(|i| {
            let a = pose.theta + cfg.angle_min + i as f64 * inc;
            let n = gaussian(rng, noise.lidar_sigma);
            match env.raycast(origin, [a.cos(), a.sin()]) {
                Some(d) if d <= cfg.range_max => (d + n).clamp(cfg.range_min, cfg.range_max),
                _ => LaserScan::NO_RETURN,
            }
        })
        .collect();
    LaserScan {
        timestamp,
        angle_min: cfg.angle_min,
        angle_increment: inc,
        range_min: cfg.range_min,
        range_max: cfg.range_max,
        ranges,
    }
}

/// Relative motion `prev⁻¹ ∘ cur` in the body frame of `prev`, with noise.
pub fn measure_odometry(prev_true: &Pose2, cur_true: &Pose2, noise: &NoiseModel, rng: &mut impl Rng) -> Pose2 {
    let delta = prev_true.between(cur_true);
    let dist = delta.translation_norm();
    let rot = delta.theta.abs();
    let st = noise.odom_trans_sigma * dist.sqrt();
    let sr = noise.odom_rot_sigma * (rot + 0.1 * dist).sqrt();
    let nx = gaussian(rng, st);
    let ny = gaussian(rng, st);
    let nt = gaussian(rng, sr);
    Pose2::new(delta.x + nx, delta.y + ny, delta.theta + nt)
}

/// IMU reading at the newest history entry, for poses sampled every `dt`.
///
/// Gyro z is the finite-difference yaw rate; accelerometer reads gravity plus
/// planar acceleration from second differences (zero with only two entries).
pub fn simulate_imu(history: &[Pose2], noise: &NoiseModel, dt: f64, timestamp: f64, rng: &mut impl Rng) -> Result<ImuSample, WorldError> {
    let n = history.len();
    if n < 2 {
        return Err(WorldError::ShortHistory { needed: 2, got: n });
    }
    let cur = history[n - 1];
    let prev = history[n - 2];
    let yaw_rate = wrap_angle(cur.theta - prev.theta) / dt;
    let (ax, ay) = if n >= 3 {
        let pp = history[n - 3];
        let wx = (cur.x - 2.0 * prev.x + pp.x) / (dt * dt);
        let wy = (cur.y - 2.0 * prev.y + pp.y) / (dt * dt);
        let (s, c) = cur.theta.sin_cos();
        (c * wx + s * wy, -s * wx + c * wy)
    } else {
        (0.0, 0.0)
    };
    let accel = [
        ax + gaussian(rng, noise.imu_accel_sigma),
        ay + gaussian(rng, noise.imu_accel_sigma),
        GRAVITY + gaussian(rng, noise.imu_accel_sigma),
    ];
    let gyro = [
        gaussian(rng, noise.imu_gyro_sigma),
        gaussian(rng, noise.imu_gyro_sigma),
        yaw_rate + gaussian(rng, noise.imu_gyro_sigma),
    ];
    Ok(ImuSample { timestamp, accel, gyro })
}
