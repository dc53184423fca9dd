//! One simulated robot: ground truth, the HL gait pipeline feeding its LL
//! consumer thread, odometry/IMU estimation and a SLAM backend.

use crate::config::{Backend, DriveMode, RobotConfig, ScenarioConfig};
use crate::drive::WaypointPursuit;
use crate::RunError;
use fleetslam_core::estimation::{fuse_odometry, MadgwickFilter, OdomState};
use fleetslam_core::filter::{FilterConfig, FilterSlam};
use fleetslam_core::gait::{apply_calibration, ll_link, twist_to_joints, CalibrationTable, GaitParams, HlLink, LowLevelController};
use fleetslam_core::graph::{scan_queue, EdgeKind, GraphSlam, MappingMode, ScanProducer};
use fleetslam_core::world::{derive_seed, measure_odometry, simulate_imu, simulate_scan, step_true_pose, Environment, SimRng};
use fleetslam_core::{LaserScan, OccupancyGrid, Pose2, Twist2};
use rand::SeedableRng;
use serde::Serialize;
use std::sync::Arc;
use std::thread::JoinHandle;

const SCAN_STREAM: u64 = 1;
const ODOM_STREAM: u64 = 2;
const IMU_STREAM: u64 = 3;
const FILTER_STREAM: u64 = 4;

pub enum SlamBackend {
    Graph(Box<GraphSlam>),
    Filter(Box<FilterSlam>),
}

impl SlamBackend {
    pub fn new(cfg: &ScenarioConfig, robot: usize) -> Result<Self, RunError> {
        Ok(match cfg.robots[robot].backend {
            Backend::Graph => SlamBackend::Graph(Box::new(GraphSlam::new(cfg.graph.clone()))),
            Backend::Filter => {
                let fc = FilterConfig {
                    seed: derive_seed(&[cfg.seed, robot as u64, FILTER_STREAM, cfg.filter.seed]),
                    ..cfg.filter.clone()
                };
                SlamBackend::Filter(Box::new(FilterSlam::new(&fc, Pose2::IDENTITY)?))
            }
        })
    }

    pub fn feed(&mut self, delta: &Pose2, scan: &LaserScan) -> Result<(), RunError> {
        match self {
            SlamBackend::Graph(g) => {
                g.add_scan(delta, scan)?;
            }
            SlamBackend::Filter(f) => {
                f.process(delta, scan);
            }
        }
        Ok(())
    }

    pub fn current_pose(&self) -> Pose2 {
        match self {
            SlamBackend::Graph(g) => g.current_pose(),
            SlamBackend::Filter(f) => f.current_pose(),
        }
    }

    pub fn map(&self) -> OccupancyGrid {
        match self {
            SlamBackend::Graph(g) => g.render(),
            SlamBackend::Filter(f) => f.best_map().0.clone(),
        }
    }

    /// (time, pose) in the robot's start frame.
    pub fn trajectory(&self) -> Vec<(f64, Pose2)> {
        match self {
            SlamBackend::Graph(g) => g.trajectory(),
            SlamBackend::Filter(f) => {
                let (_, poses) = f.best_map();
                f.stamps().iter().copied().zip(poses.iter().copied()).collect()
            }
        }
    }

    /// Last optimization pass before the map is exported.
    pub fn finish(&mut self) -> Result<(), RunError> {
        if let SlamBackend::Graph(g) = self {
            if g.graph.nodes.len() > 1 {
                g.optimize()?;
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> BackendSummary {
        match self {
            SlamBackend::Graph(g) => BackendSummary::Graph {
                nodes: g.graph.nodes.len(),
                scan_match_edges: g.graph.edge_count(EdgeKind::ScanMatch),
                odometry_edges: g.graph.edge_count(EdgeKind::Odometry),
                loop_closures: g.graph.edge_count(EdgeKind::LoopClosure),
            },
            SlamBackend::Filter(f) => BackendSummary::Filter {
                particles: f.state.particles.len(),
                updates: f.stamps().len(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum BackendSummary {
    Graph {
        nodes: usize,
        scan_match_edges: usize,
        odometry_edges: usize,
        loop_closures: usize,
    },
    Filter {
        particles: usize,
        updates: usize,
    },
}

/// Where scans go: processed inline, or handed to a mapping worker thread.
enum Mapper {
    Inline(SlamBackend),
    Worker {
        producer: ScanProducer,
        handle: JoinHandle<Result<SlamBackend, RunError>>,
    },
    /// fast-forward: scans are simulated but not mapped
    Detached,
}

/// Everything a robot records while it runs, in its start frame.
#[derive(Debug, Clone, Default)]
pub struct RobotLog {
    /// true pose at every scan
    pub truth: Vec<(f64, Pose2)>,
    /// fused odometry at every scan
    pub odometry: Vec<(f64, Pose2)>,
    pub scans: Vec<LaserScan>,
}

pub struct RobotSim {
    pub cfg: RobotConfig,
    pub index: usize,
    env: Arc<Environment>,
    scenario: Arc<ScenarioConfig>,
    pub step: u64,
    pub true_pose: Pose2,
    history: [Pose2; 3],
    pursuit: Option<WaypointPursuit>,
    gait: GaitParams,
    calibration: CalibrationTable,
    phase: f64,
    hl: Option<HlLink>,
    ll: Option<JoinHandle<LowLevelController>>,
    madgwick: MadgwickFilter,
    pub odom: OdomState,
    last_scan_odom: Pose2,
    rng_scan: SimRng,
    rng_odom: SimRng,
    rng_imu: SimRng,
    mapper: Mapper,
    pub log: RobotLog,
    pub record_scans: bool,
    pub route_done_at: Option<f64>,
    pub last_scan: Option<LaserScan>,
}

impl RobotSim {
    /// Place the robot and take its first scan. `map` false fast-forwards
    /// without a backend (see [`RobotSim::attach`]).
    pub fn new(
        env: Arc<Environment>,
        scenario: Arc<ScenarioConfig>,
        index: usize,
        map: bool,
        record_scans: bool,
    ) -> Result<Self, RunError> {
        let cfg = scenario.robots[index].clone();
        let start = cfg.start_pose();
        let stream = |s: u64| SimRng::seed_from_u64(derive_seed(&[scenario.seed, scenario.noise.rng_seed, index as u64, s]));
        let (hl, ll) = ll_link(64);
        let ll = std::thread::Builder::new()
            .name(format!("{}-ll", cfg.namespace))
            .spawn(move || ll.run())
            .map_err(|e| RunError::Io(e.to_string()))?;
        let mapper = if !map {
            Mapper::Detached
        } else {
            let backend = SlamBackend::new(&scenario, index)?;
            match (&backend, scenario.graph.mode) {
                (SlamBackend::Graph(_), MappingMode::Asynchronous) => {
                    let (producer, consumer) = scan_queue(MappingMode::Asynchronous, 1);
                    let mut backend = backend;
                    let handle = std::thread::Builder::new()
                        .name(format!("{}-mapper", cfg.namespace))
                        .spawn(move || {
                            while let Some((delta, scan)) = consumer.recv() {
                                backend.feed(&delta, &scan)?;
                            }
                            Ok(backend)
                        })
                        .map_err(|e| RunError::Io(e.to_string()))?;
                    Mapper::Worker { producer, handle }
                }
                _ => Mapper::Inline(backend),
            }
        };
        let pursuit = (cfg.drive == DriveMode::Scripted).then(|| WaypointPursuit::new(cfg.waypoints.clone(), scenario.drive.clone()));
        let mut sim = Self {
            index,
            env,
            step: 0,
            true_pose: start,
            history: [start; 3],
            pursuit,
            gait: GaitParams::default(),
            calibration: CalibrationTable::default(),
            phase: 0.0,
            hl: Some(hl),
            ll: Some(ll),
            madgwick: MadgwickFilter::new(scenario.estimation.madgwick_beta),
            odom: OdomState {
                pose: Pose2::IDENTITY,
                timestamp: 0.0,
            },
            last_scan_odom: Pose2::IDENTITY,
            rng_scan: stream(SCAN_STREAM),
            rng_odom: stream(ODOM_STREAM),
            rng_imu: stream(IMU_STREAM),
            mapper,
            log: RobotLog::default(),
            record_scans,
            route_done_at: None,
            last_scan: None,
            cfg,
            scenario,
        };
        sim.scan()?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.scenario.dt
    }

    pub fn start(&self) -> Pose2 {
        self.cfg.start_pose()
    }

    /// True pose in the robot's start (map) frame.
    pub fn true_in_start(&self) -> Pose2 {
        self.start().between(&self.true_pose)
    }

    pub fn route_finished(&self) -> bool {
        self.pursuit.as_ref().is_none_or(WaypointPursuit::finished)
    }

    /// Scan at the current step and hand it to the mapper.
    fn scan(&mut self) -> Result<(), RunError> {
        let t = self.time();
        let scan = simulate_scan(
            &self.env,
            &self.true_pose,
            &self.scenario.lidar,
            &self.scenario.noise,
            t,
            &mut self.rng_scan,
        );
        let delta = self.last_scan_odom.between(&self.odom.pose);
        self.last_scan_odom = self.odom.pose;
        self.log.truth.push((t, self.true_in_start()));
        self.log.odometry.push((t, self.odom.pose));
        match &mut self.mapper {
            Mapper::Inline(b) => b.feed(&delta, &scan)?,
            Mapper::Worker { producer, .. } => {
                producer.push(delta, scan.clone());
            }
            Mapper::Detached => {}
        }
        if self.record_scans {
            self.log.scans.push(scan.clone());
        }
        self.last_scan = Some(scan);
        Ok(())
    }

    /// Advance one simulation step. `teleop` replaces the scripted command.
    /// Returns true when a scan was taken.
    pub fn advance(&mut self, teleop: Option<Twist2>) -> Result<bool, RunError> {
        let dt = self.scenario.dt;
        let cmd = match (&mut self.pursuit, teleop) {
            (_, Some(t)) => t,
            (Some(p), None) => p.command(&self.true_pose),
            (None, None) => Twist2::ZERO,
        }
        .clamped(&self.scenario.limits);
        if self.route_done_at.is_none() && self.pursuit.as_ref().is_some_and(WaypointPursuit::finished) {
            self.route_done_at = Some(self.time());
        }

        // HL: gait and calibration, then the byte frame to the LL thread
        let joints = twist_to_joints(&cmd, self.phase, &self.gait)?;
        let servo = apply_calibration(&joints, &self.calibration);
        if let Some(hl) = &self.hl {
            hl.send(&servo);
        }
        if !cmd.is_zero() {
            self.phase = (self.phase + dt / self.gait.cycle_period).rem_euclid(1.0);
        }

        let prev = self.true_pose;
        self.true_pose = step_true_pose(&self.env, &prev, &cmd, dt, self.scenario.body_radius);
        self.step += 1;
        self.history = [self.history[1], self.history[2], self.true_pose];

        let t = self.time();
        let history = if self.step == 1 { &self.history[1..] } else { &self.history[..] };
        let imu = simulate_imu(history, &self.scenario.noise, dt, t, &mut self.rng_imu)?;
        let q = self.madgwick.update(&imu, dt);
        let delta = measure_odometry(&prev, &self.true_pose, &self.scenario.noise, &mut self.rng_odom);
        self.odom = fuse_odometry(&self.odom, &delta, q.yaw(), self.scenario.estimation.yaw_alpha, t);

        if self.step.is_multiple_of(self.scenario.scan_every() as u64) {
            self.scan()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Hand a backend to a robot that was fast-forwarded to this point.
    pub fn attach(&mut self, backend: SlamBackend) {
        self.mapper = Mapper::Inline(backend);
    }

    pub fn backend(&self) -> Option<&SlamBackend> {
        match &self.mapper {
            Mapper::Inline(b) => Some(b),
            _ => None,
        }
    }

    pub fn backend_mut(&mut self) -> Option<&mut SlamBackend> {
        match &mut self.mapper {
            Mapper::Inline(b) => Some(b),
            _ => None,
        }
    }

    /// Best current pose estimate in the start frame.
    pub fn estimate(&self) -> Pose2 {
        self.backend().map_or(self.odom.pose, SlamBackend::current_pose)
    }

    /// Stop the LL thread and mapping worker; returns the backend (if any)
    /// and the LL frame counters.
    pub fn shutdown(mut self) -> Result<(Option<SlamBackend>, LlCounters, RobotLog), RunError> {
        drop(self.hl.take());
        let ll = self
            .ll
            .take()
            .map(|h| h.join().map_err(|_| RunError::Crashed(format!("{} LL thread", self.cfg.namespace))))
            .transpose()?;
        let counters = ll.map_or(LlCounters::default(), |c| LlCounters {
            accepted: c.accepted,
            rejected: c.rejected,
            last: c.current.map(|s| *s.angles()),
        });
        let backend = match std::mem::replace(&mut self.mapper, Mapper::Detached) {
            Mapper::Inline(b) => Some(b),
            Mapper::Worker { producer, handle } => {
                drop(producer);
                Some(
                    handle
                        .join()
                        .map_err(|_| RunError::Crashed(format!("{} mapper", self.cfg.namespace)))??,
                )
            }
            Mapper::Detached => None,
        };
        Ok((backend, counters, std::mem::take(&mut self.log)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LlCounters {
    pub accepted: u64,
    pub rejected: u64,
    pub last: Option<[u8; 12]>,
}
