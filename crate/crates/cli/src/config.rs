//! Scenario files (TOML).

use fleetslam_core::filter::FilterConfig;
use fleetslam_core::graph::GraphConfig;
use fleetslam_core::merge::MergeConfig;
use fleetslam_core::world::{load_environment, Environment, LidarConfig, NoiseModel, DEFAULT_BODY_RADIUS};
use fleetslam_core::{Pose2, TwistLimits};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("environment {path}: {source}")]
    Environment {
        path: PathBuf,
        source: fleetslam_core::world::WorldError,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Filter,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DriveMode {
    #[default]
    Scripted,
    Teleop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub namespace: String,
    /// x, y, theta in the environment frame
    pub start: [f64; 3],
    pub backend: Backend,
    #[serde(default)]
    pub drive: DriveMode,
    #[serde(default)]
    pub waypoints: Vec<[f64; 2]>,
}

impl RobotConfig {
    pub fn start_pose(&self) -> Pose2 {
        Pose2::new(self.start[0], self.start[1], self.start[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveConfig {
    pub tolerance: f64,
    pub max_speed: f64,
    pub max_turn_rate: f64,
    /// turn in place while the heading error exceeds this (rad)
    pub turn_threshold: f64,
    /// teleop commands older than this are treated as zero (s)
    pub deadman: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.1,
            max_speed: 0.25,
            max_turn_rate: 0.8,
            turn_threshold: 0.15,
            deadman: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub madgwick_beta: f64,
    /// IMU yaw blend; 0 keeps wheel-free leg odometry only
    pub yaw_alpha: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            madgwick_beta: fleetslam_core::estimation::DEFAULT_BETA,
            yaw_alpha: fleetslam_core::estimation::DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergerConfig {
    /// seconds between merges while a scenario runs live
    pub cadence: f64,
    #[serde(flatten)]
    pub merge: MergeConfig,
}

impl Default for MergerConfig {
    fn default() -> Self {
        Self {
            cadence: 2.0,
            merge: MergeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HubPorts {
    pub tcp_port: u16,
    pub ws_port: u16,
}

impl Default for HubPorts {
    fn default() -> Self {
        Self {
            tcp_port: fleetslam_hub::DEFAULT_TCP_PORT,
            ws_port: fleetslam_hub::DEFAULT_WS_PORT,
        }
    }
}

fn default_dt() -> f64 {
    0.02
}

fn default_map_period() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    /// environment file, relative to the scenario file
    pub environment: PathBuf,
    pub seed: u64,
    /// upper bound on simulated time (s); scripted runs end earlier once
    /// every robot has finished its route
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// seconds between map publishes on `<ns>/map`
    #[serde(default = "default_map_period")]
    pub map_period: f64,
    #[serde(default = "default_body_radius")]
    pub body_radius: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub lidar: LidarConfig,
    #[serde(default)]
    pub limits: TwistLimits,
    #[serde(default)]
    pub drive: DriveConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub merger: MergerConfig,
    #[serde(default)]
    pub hub: HubPorts,
    pub robots: Vec<RobotConfig>,
}

fn default_body_radius() -> f64 {
    DEFAULT_BODY_RADIUS
}

impl ScenarioConfig {
    /// Parse a scenario; a relative environment path is resolved against `base`.
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        if cfg.environment.is_relative() {
            cfg.environment = base.join(&cfg.environment);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), path)
    }

    pub fn load_environment(&self) -> Result<Environment, ConfigError> {
        load_environment(&self.environment).map_err(|source| ConfigError::Environment {
            path: self.environment.clone(),
            source,
        })
    }

    /// Everything that can be checked before a robot starts.
    pub fn validate(&self, env: &Environment) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.robots.is_empty() {
            return bad("at least one robot is required".into());
        }
        if !(self.dt > 0.0) || !(self.duration > 0.0) || !(self.map_period > 0.0) {
            return bad("dt, duration and map_period must be positive".into());
        }
        let scan_every = 1.0 / (self.lidar.scan_rate * self.dt);
        if (scan_every - scan_every.round()).abs() > 1e-9 || scan_every.round() < 1.0 {
            return bad("the lidar period must be a whole number of simulation steps".into());
        }
        self.lidar.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.noise.validate().map_err(|e| ConfigError::Invalid(e.into()))?;
        self.filter.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.graph.validate().map_err(|e| ConfigError::Invalid(e.into()))?;
        if !(self.merger.cadence > 0.0) {
            return bad("merger cadence must be positive".into());
        }
        let mut seen = HashSet::new();
        for r in &self.robots {
            if fleetslam_hub::TopicName::parse(&r.namespace).map_or(true, |t| t.as_str().contains('/'))
                || r.namespace == fleetslam_hub::hub::MERGED_NAMESPACE
            {
                return bad(format!("{:?} is not a usable robot namespace", r.namespace));
            }
            if !seen.insert(r.namespace.as_str()) {
                return bad(format!("namespace {:?} is used twice", r.namespace));
            }
            let p = [r.start[0], r.start[1]];
            if !env.bounds().contains(p) || env.clearance(p) <= self.body_radius {
                return bad(format!("{} starts outside the free space of the environment", r.namespace));
            }
            if r.drive == DriveMode::Scripted && r.waypoints.is_empty() {
                return bad(format!("{} is scripted but has no waypoints", r.namespace));
            }
        }
        Ok(())
    }

    /// Simulation steps between lidar scans.
    pub fn scan_every(&self) -> usize {
        (1.0 / (self.lidar.scan_rate * self.dt)).round() as usize
    }
}
