//! Twist sources: scripted waypoint pursuit and teleoperation.

use crate::config::DriveConfig;
use fleetslam_core::{wrap_angle, Pose2, Twist2};

/// Turn toward the next waypoint, then drive at it; advance once within
/// tolerance. Steers on the simulator's pose, the way an operator watching
/// the robot would.
#[derive(Debug, Clone)]
pub struct WaypointPursuit {
    waypoints: Vec<[f64; 2]>,
    next: usize,
    cfg: DriveConfig,
}

impl WaypointPursuit {
    pub fn new(waypoints: Vec<[f64; 2]>, cfg: DriveConfig) -> Self {
        Self { waypoints, next: 0, cfg }
    }

    pub fn finished(&self) -> bool {
        self.next >= self.waypoints.len()
    }

    pub fn next_index(&self) -> usize {
        self.next
    }

    pub fn command(&mut self, pose: &Pose2) -> Twist2 {
        while let Some(w) = self.waypoints.get(self.next) {
            let (dx, dy) = (w[0] - pose.x, w[1] - pose.y);
            let dist = dx.hypot(dy);
            if dist < self.cfg.tolerance {
                self.next += 1;
                continue;
            }
            let err = wrap_angle(dy.atan2(dx) - pose.theta);
            let wz = (2.0 * err).clamp(-self.cfg.max_turn_rate, self.cfg.max_turn_rate);
            if err.abs() > self.cfg.turn_threshold {
                return Twist2::new(0.0, 0.0, wz);
            }
            let vx = (0.8 * dist + 0.05).min(self.cfg.max_speed);
            return Twist2::new(vx, 0.0, wz);
        }
        Twist2::ZERO
    }
}

/// Latest operator command with a dead-man timeout.
#[derive(Debug, Clone, Copy, Default)]
pub struct TeleopState {
    last: Option<(f64, Twist2)>,
}

impl TeleopState {
    pub fn update(&mut self, now: f64, cmd: Twist2) {
        self.last = Some((now, cmd));
    }

    pub fn command(&self, now: f64, deadman: f64) -> Twist2 {
        match self.last {
            Some((t, cmd)) if now - t <= deadman => cmd,
            _ => Twist2::ZERO,
        }
    }
}
