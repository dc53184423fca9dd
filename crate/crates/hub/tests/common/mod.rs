#![allow(dead_code)]

use fleetslam_core::world::{simulate_scan, Environment, LidarConfig, NoiseModel, Segment, SimRng};
use fleetslam_core::{OccupancyGrid, Pose2};
use fleetslam_hub::{Envelope, HubClient};
use rand::SeedableRng;
use std::time::{Duration, Instant};

fn boxed(w: &mut Vec<Segment>, x0: f64, y0: f64, x1: f64, y1: f64) {
    w.push(Segment::new(x0, y0, x1, y0));
    w.push(Segment::new(x1, y0, x1, y1));
    w.push(Segment::new(x1, y1, x0, y1));
    w.push(Segment::new(x0, y1, x0, y0));
}

/// Irregular room with enough corners for the merger to lock on.
pub fn room() -> Environment {
    let mut w = vec![
        Segment::new(0.0, 0.0, 7.0, 0.0),
        Segment::new(7.0, 0.0, 7.0, 2.0),
        Segment::new(7.0, 2.0, 8.0, 2.0),
        Segment::new(8.0, 2.0, 8.0, 6.0),
        Segment::new(8.0, 6.0, 3.0, 6.0),
        Segment::new(3.0, 6.0, 3.0, 5.0),
        Segment::new(3.0, 5.0, 0.0, 5.0),
        Segment::new(0.0, 5.0, 0.0, 0.0),
        Segment::new(4.0, 0.0, 4.0, 1.5),
        Segment::new(5.5, 4.0, 5.5, 6.0),
        Segment::new(2.0, 0.0, 2.0, 0.5),
        Segment::new(0.0, 2.8, 0.6, 2.8),
        Segment::new(6.5, 4.8, 7.5, 4.8),
        Segment::new(7.5, 4.8, 7.5, 5.4),
    ];
    boxed(&mut w, 4.8, 2.4, 5.1, 2.7);
    boxed(&mut w, 1.0, 4.0, 1.4, 4.3);
    boxed(&mut w, 1.2, 1.2, 1.8, 2.0);
    boxed(&mut w, 2.5, 3.2, 3.3, 3.6);
    boxed(&mut w, 6.0, 3.0, 6.4, 3.3);
    Environment::new(w).unwrap()
}

/// Zero-noise map of `env` from `poses`, expressed in a frame whose pose in
/// the environment is `frame`.
pub fn mapped(env: &Environment, poses: &[Pose2], frame: &Pose2) -> OccupancyGrid {
    let mut g = OccupancyGrid::centered([0.0, 0.0], 0.05, 64);
    let mut rng = SimRng::seed_from_u64(3);
    for p in poses {
        let s = simulate_scan(env, p, &LidarConfig::default(), &NoiseModel::zero(), 0.0, &mut rng);
        let local = frame.inverse().compose(p);
        for _ in 0..3 {
            g.integrate_scan(&local, &s);
        }
    }
    g
}

pub fn survey() -> Vec<Pose2> {
    [
        (1.0, 0.6),
        (2.5, 1.0),
        (3.0, 2.5),
        (1.0, 3.5),
        (2.0, 4.4),
        (5.0, 1.0),
        (6.0, 2.0),
        (5.0, 3.0),
        (7.0, 4.5),
        (4.5, 5.0),
        (6.5, 5.5),
    ]
    .iter()
    .map(|&(x, y)| Pose2::new(x, y, 0.3))
    .collect()
}

/// Collect deliveries until `n` arrive or `timeout` passes.
pub fn collect(client: &mut dyn HubClient, n: usize, timeout: Duration) -> Vec<Envelope> {
    let deadline = Instant::now() + timeout;
    let mut out = Vec::new();
    while out.len() < n {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            break;
        }
        match client.recv_timeout(left.min(Duration::from_millis(100))) {
            Ok(Some(e)) => out.push(e),
            Ok(None) => {}
            Err(_) => break,
        }
    }
    out
}

/// Wait briefly and return anything else that shows up.
pub fn drain(client: &mut dyn HubClient, wait: Duration) -> Vec<Envelope> {
    let mut out = Vec::new();
    while let Ok(Some(e)) = client.recv_timeout(wait) {
        out.push(e);
    }
    out
}
