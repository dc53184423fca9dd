//! Scenario orchestration: hub, robot threads, merger, artifacts, metrics.

use crate::config::{DriveMode, ScenarioConfig};
use crate::drive::TeleopState;
use crate::robot::{BackendSummary, LlCounters, RobotLog, RobotSim, SlamBackend};
use crate::RunError;
use fleetslam_core::grid::export_map;
use fleetslam_core::metrics::{agreement, ate, transform_error, TIME_TOLERANCE};
use fleetslam_core::world::Environment;
use fleetslam_core::{OccupancyGrid, Pose2, Twist2};
use fleetslam_hub::merger::{run_merger_service, MergerService, TickOutcome, MERGED_MAP};
use fleetslam_hub::payload::{decode_map, encode_map, from_json, to_json, TransformSet};
use fleetslam_hub::server::Server;
use fleetslam_hub::tcp::{serve_tcp, TcpClient};
use fleetslam_hub::ws::serve_ws;
use fleetslam_hub::{Hub, HubClient, HubConfig, PayloadType, Role, Sequencer};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

/// Simulated seconds a scripted robot keeps running after its last waypoint.
pub const SETTLE_TIME: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Transport {
    #[default]
    Inproc,
    Tcp,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub transport: Transport,
    /// every robot takes commands from `<ns>/cmd_vel`; the run is paced in
    /// real time and the WebSocket endpoint is opened
    pub teleop: bool,
    /// keep every scan in the robot logs
    pub record_scans: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotMetrics {
    pub namespace: String,
    pub summary: BackendSummary,
    /// RMSE (m) of the SLAM trajectory against ground truth
    pub ate: f64,
    /// same for the fused odometry alone
    pub ate_odometry: f64,
    /// observed cells whose class matches the ground truth
    pub agreement: f64,
    pub sim_time: f64,
    pub ll_frames_accepted: u64,
    pub ll_frames_rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformMetrics {
    pub namespace: String,
    pub error_m: f64,
    pub error_deg: f64,
    pub inliers: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedMetrics {
    pub anchor: String,
    pub agreement: f64,
    pub transforms: Vec<TransformMetrics>,
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub robots: Vec<RobotMetrics>,
    pub merged: Option<MergedMetrics>,
}

pub struct RobotResult {
    pub namespace: String,
    pub start: Pose2,
    pub map: OccupancyGrid,
    pub trajectory: Vec<(f64, Pose2)>,
    pub log: RobotLog,
    pub ll: LlCounters,
    /// saved pose graph for the graph backend
    pub graph_save: Option<Vec<u8>>,
    pub metrics: RobotMetrics,
}

pub struct MergedResult {
    pub grid: OccupancyGrid,
    pub transforms: TransformSet,
}

pub struct RunOutput {
    pub metrics: RunMetrics,
    pub robots: Vec<RobotResult>,
    pub merged: Option<MergedResult>,
    pub wall_time: Duration,
}

/// Hub link of one robot.
struct RobotLink {
    client: Box<dyn HubClient>,
    seq: Sequencer,
    ns: String,
}

impl RobotLink {
    fn publish(&mut self, leaf: &str, t: f64, ty: PayloadType, payload: Vec<u8>) -> Result<(), RunError> {
        let topic = format!("{}/{leaf}", self.ns);
        Ok(self.seq.publish(self.client.as_mut(), &topic, t, ty, payload)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DriveLimits {
    pub duration: f64,
    pub realtime: bool,
    pub map_period: f64,
    pub deadman: f64,
}

/// Whether a robot is done: scripted routes end shortly after the last
/// waypoint, everything ends at the scenario duration.
fn done(sim: &RobotSim, duration: f64) -> bool {
    if sim.time() >= duration - 1e-9 {
        return true;
    }
    sim.route_done_at.is_some_and(|t| sim.time() >= t + SETTLE_TIME - 1e-9)
}

/// Drive one robot to completion, publishing as it goes.
fn drive(
    mut sim: RobotSim,
    mut link: Option<RobotLink>,
    limits: DriveLimits,
    teleop: bool,
) -> Result<(RobotSim, Option<RobotLink>), RunError> {
    let wall = Instant::now();
    let mut teleop_state = TeleopState::default();
    let mut last_map = f64::NEG_INFINITY;
    while !done(&sim, limits.duration) {
        let cmd = if teleop {
            if let Some(l) = link.as_mut() {
                while let Some(env) = l.client.recv_timeout(Duration::ZERO)? {
                    if let Ok(t) = from_json::<Twist2>(&env.payload) {
                        teleop_state.update(sim.time(), t);
                    }
                }
            }
            Some(teleop_state.command(sim.time(), limits.deadman))
        } else {
            None
        };
        let scanned = sim.advance(cmd)?;
        if scanned {
            if let Some(l) = link.as_mut() {
                let t = sim.time();
                l.publish("pose", t, PayloadType::Pose, to_json(&sim.estimate()))?;
                if let Some(scan) = &sim.last_scan {
                    l.publish("scan", t, PayloadType::Scan, to_json(scan))?;
                }
                if t - last_map >= limits.map_period - 1e-9 {
                    if let Some(b) = sim.backend() {
                        l.publish("map", t, PayloadType::Map, encode_map(&b.map()))?;
                        last_map = t;
                    }
                }
            }
        }
        if limits.realtime {
            let ahead = Duration::from_secs_f64(sim.time()).saturating_sub(wall.elapsed());
            if !ahead.is_zero() {
                thread::sleep(ahead);
            }
        }
    }
    Ok((sim, link))
}

/// Final optimization, metrics and the last map publish for one robot.
fn finish(sim: RobotSim, env: &Environment, link: Option<RobotLink>) -> Result<RobotResult, RunError> {
    let ns = sim.cfg.namespace.clone();
    let start = sim.start();
    let sim_time = sim.time();
    let (backend, ll, log) = sim.shutdown()?;
    let mut backend = backend.ok_or_else(|| RunError::Crashed(format!("{ns} has no mapping backend")))?;
    backend.finish()?;
    let map = backend.map();
    if let Some(mut l) = link {
        l.publish("map", sim_time, PayloadType::Map, encode_map(&map))?;
    }
    let trajectory = backend.trajectory();
    let graph_save = match &backend {
        SlamBackend::Graph(g) => Some(g.save()),
        SlamBackend::Filter(_) => None,
    };
    let metrics = RobotMetrics {
        namespace: ns.clone(),
        summary: backend.summary(),
        ate: ate(&log.truth, &trajectory, TIME_TOLERANCE)?,
        ate_odometry: ate(&log.truth, &log.odometry, TIME_TOLERANCE)?,
        agreement: agreement(&map, env, &start),
        sim_time,
        ll_frames_accepted: ll.accepted,
        ll_frames_rejected: ll.rejected,
    };
    Ok(RobotResult {
        namespace: ns,
        start,
        map,
        trajectory,
        log,
        ll,
        graph_save,
        metrics,
    })
}

fn connect(hub: &Arc<Hub>, tcp: Option<&Server>, role: Role, ns: Option<&str>) -> Result<Box<dyn HubClient>, RunError> {
    Ok(match tcp {
        Some(s) => Box::new(TcpClient::connect(s.local_addr(), role, ns)?),
        None => Box::new(hub.connect(role, ns)?),
    })
}

/// Run a scenario end to end.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutput, RunError> {
    let wall = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if opts.teleop {
        for r in &mut cfg.robots {
            r.drive = DriveMode::Teleop;
        }
    }
    let env = Arc::new(cfg.load_environment()?);
    cfg.validate(&env)?;
    let cfg = Arc::new(cfg);

    let hub = Hub::new(HubConfig::default());
    let tcp = match opts.transport {
        Transport::Tcp => Some(serve_tcp(hub.clone(), ("127.0.0.1", cfg.hub.tcp_port))?),
        Transport::Inproc => None,
    };
    let live = opts.teleop || cfg.robots.iter().any(|r| r.drive == DriveMode::Teleop);
    let _ws = if live {
        Some(serve_ws(hub.clone(), ("0.0.0.0", cfg.hub.ws_port))?)
    } else {
        None
    };
    let limits = DriveLimits {
        duration: cfg.duration,
        realtime: live,
        map_period: cfg.map_period,
        deadman: cfg.drive.deadman,
    };

    // live runs merge on a wall-clock cadence; batch runs merge once at the end
    let stop_merger = Arc::new(AtomicBool::new(false));
    let merger = if live && cfg.robots.len() > 1 {
        let mut client = connect(&hub, tcp.as_ref(), Role::Merger, None)?;
        let (flag, cadence, mcfg) = (
            stop_merger.clone(),
            Duration::from_secs_f64(cfg.merger.cadence),
            cfg.merger.merge.clone(),
        );
        Some(thread::spawn(move || run_merger_service(client.as_mut(), cadence, mcfg, &flag)))
    } else {
        None
    };

    let mut handles = Vec::new();
    for (index, r) in cfg.robots.iter().enumerate() {
        let mut client = connect(&hub, tcp.as_ref(), Role::Robot, Some(&r.namespace))?;
        let teleop = r.drive == DriveMode::Teleop;
        if teleop {
            client.subscribe(&format!("{}/cmd_vel", r.namespace))?;
        }
        let link = RobotLink {
            client,
            seq: Sequencer::default(),
            ns: r.namespace.clone(),
        };
        let (env, cfg) = (env.clone(), cfg.clone());
        let record = opts.record_scans;
        let handle = thread::Builder::new()
            .name(r.namespace.clone())
            .spawn(move || -> Result<RobotResult, RunError> {
                let sim = RobotSim::new(env.clone(), cfg, index, true, record)?;
                let (sim, link) = drive(sim, Some(link), limits, teleop)?;
                finish(sim, &env, link)
            })
            .map_err(|e| RunError::Io(e.to_string()))?;
        handles.push((r.namespace.clone(), handle));
    }
    let mut robots = Vec::new();
    let mut failures = Vec::new();
    for (ns, h) in handles {
        match h.join() {
            Ok(Ok(r)) => robots.push(r),
            Ok(Err(e)) => failures.push(format!("{ns}: {e}")),
            Err(_) => failures.push(format!("{ns}: thread panicked")),
        }
    }
    stop_merger.store(true, Ordering::Relaxed);
    if let Some(m) = merger {
        match m.join() {
            Ok(Err(e)) => log::warn!("live merger stopped: {e}"),
            Err(_) => log::warn!("live merger panicked"),
            Ok(Ok(())) => {}
        }
    }
    if !failures.is_empty() {
        if let Some(out) = &opts.out {
            write_robot_artifacts(out, &robots)?;
            std::fs::write(out.join("INCOMPLETE"), failures.join("\n") + "\n")?;
        }
        return Err(RunError::Crashed(failures.join("; ")));
    }

    // every robot's final map is latched on the hub; the merger works from that
    let merged = if robots.len() > 1 {
        Some(final_merge(&hub, tcp.as_ref(), &cfg, robots.len())?)
    } else {
        None
    };
    let merged_metrics = merged.as_ref().map(|m| merged_metrics(m, &robots, &env));

    let metrics = RunMetrics {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        robots: robots.iter().map(|r| r.metrics.clone()).collect(),
        merged: merged_metrics,
    };
    let output = RunOutput {
        metrics,
        robots,
        merged,
        wall_time: wall.elapsed(),
    };
    if let Some(out) = &opts.out {
        write_artifacts(out, &output)?;
    }
    Ok(output)
}

fn final_merge(hub: &Arc<Hub>, tcp: Option<&Server>, cfg: &ScenarioConfig, n: usize) -> Result<MergedResult, RunError> {
    let mut client = connect(hub, tcp, Role::Merger, None)?;
    let mut svc = MergerService::new(cfg.merger.merge.clone());
    svc.attach(client.as_mut())?;
    let deadline = Instant::now() + Duration::from_secs(30);
    while svc.map_count() < n && Instant::now() < deadline {
        svc.poll(client.as_mut(), Duration::from_millis(100))?;
    }
    let transforms = match svc.tick(client.as_mut(), cfg.duration)? {
        TickOutcome::Merged { transforms, .. } => transforms,
        TickOutcome::Waiting => return Err(RunError::Crashed("merger saw no maps".into())),
    };
    let latest = hub
        .latched(MERGED_MAP)
        .pop()
        .ok_or_else(|| RunError::Crashed("merged map was not published".into()))?;
    Ok(MergedResult {
        grid: decode_map(&latest.payload)?,
        transforms,
    })
}

fn merged_metrics(m: &MergedResult, robots: &[RobotResult], env: &Environment) -> MergedMetrics {
    let anchor = robots
        .iter()
        .find(|r| r.namespace == m.transforms.anchor)
        .expect("anchor is one of the robots");
    let transforms = m
        .transforms
        .transforms
        .iter()
        .map(|t| {
            let r = robots
                .iter()
                .find(|r| r.namespace == t.namespace)
                .expect("transform for a known robot");
            let truth = anchor.start.between(&r.start);
            let (error_m, error_deg) = transform_error(&Pose2::new(t.x, t.y, t.theta), &truth);
            TransformMetrics {
                namespace: t.namespace.clone(),
                error_m,
                error_deg,
                inliers: t.inliers,
                confidence: t.confidence,
            }
        })
        .collect();
    let placed: Vec<&str> = m.transforms.transforms.iter().map(|t| t.namespace.as_str()).collect();
    MergedMetrics {
        anchor: anchor.namespace.clone(),
        agreement: agreement(&m.grid, env, &anchor.start),
        transforms,
        excluded: robots
            .iter()
            .map(|r| r.namespace.clone())
            .filter(|n| !placed.contains(&n.as_str()))
            .collect(),
    }
}

pub fn trajectory_csv(traj: &[(f64, Pose2)]) -> String {
    let mut s = String::from("t,x,y,theta\n");
    for (t, p) in traj {
        let _ = writeln!(s, "{t},{},{},{}", p.x, p.y, p.theta);
    }
    s
}

fn write_robot_artifacts(out: &Path, robots: &[RobotResult]) -> Result<(), RunError> {
    for r in robots {
        let dir = out.join(&r.namespace);
        std::fs::create_dir_all(&dir)?;
        export_map(&r.map, dir.join("map"))?;
        std::fs::write(dir.join("truth.csv"), trajectory_csv(&r.log.truth))?;
        std::fs::write(dir.join("estimate.csv"), trajectory_csv(&r.trajectory))?;
        std::fs::write(dir.join("odometry.csv"), trajectory_csv(&r.log.odometry))?;
        if let Some(g) = &r.graph_save {
            std::fs::write(dir.join("graph.fspg"), g)?;
        }
    }
    Ok(())
}

/// Per-robot maps, trajectories and graphs, the merged map and transforms,
/// and `metrics.json`.
pub fn write_artifacts(out: &Path, run: &RunOutput) -> Result<(), RunError> {
    std::fs::create_dir_all(out)?;
    write_robot_artifacts(out, &run.robots)?;
    if let Some(m) = &run.merged {
        let dir = out.join("merged");
        std::fs::create_dir_all(&dir)?;
        export_map(&m.grid, dir.join("map"))?;
        std::fs::write(
            dir.join("transforms.json"),
            serde_json::to_string_pretty(&m.transforms).map_err(|e| RunError::Io(e.to_string()))?,
        )?;
    }
    let json = serde_json::to_string_pretty(&run.metrics).map_err(|e| RunError::Io(e.to_string()))?;
    std::fs::write(out.join("metrics.json"), json + "\n")?;
    Ok(())
}
