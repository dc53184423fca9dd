//! Planar rigid-body algebra shared by the simulator, estimators and SLAM backends.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Wrap an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid can return exactly TAU - tiny for tiny negative inputs
    if r <= -PI {
        r += TAU;
    }
    r
}

/// SE(2) pose: position in meters, heading in radians wrapped to (-π, π].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    /// `self ∘ other`, with `other` expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    /// Relative pose of `other` seen from `self`: `self⁻¹ ∘ other`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }

    /// Map a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn inverse_transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Free function form of [`Pose2::compose`].
pub fn compose_se2(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

/// Body-frame velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2 {
    /// forward, m/s
    pub vx: f64,
    /// lateral (left positive), m/s
    pub vy: f64,
    /// yaw rate, rad/s
    pub wz: f64,
}

impl Twist2 {
    pub const ZERO: Twist2 = Twist2 { vx: 0.0, vy: 0.0, wz: 0.0 };

    pub fn new(vx: f64, vy: f64, wz: f64) -> Self {
        Self { vx, vy, wz }
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.wz == 0.0
    }

    pub fn clamped(&self, limits: &TwistLimits) -> Twist2 {
        Twist2 {
            vx: self.vx.clamp(-limits.max_vx, limits.max_vx),
            vy: self.vy.clamp(-limits.max_vy, limits.max_vy),
            wz: self.wz.clamp(-limits.max_wz, limits.max_wz),
        }
    }

    pub fn within(&self, limits: &TwistLimits) -> bool {
        self.vx.abs() <= limits.max_vx && self.vy.abs() <= limits.max_vy && self.wz.abs() <= limits.max_wz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwistLimits {
    pub max_vx: f64,
    pub max_vy: f64,
    pub max_wz: f64,
}

impl Default for TwistLimits {
    fn default() -> Self {
        Self {
            max_vx: 0.3,
            max_vy: 0.3,
            max_wz: 1.0,
        }
    }
}
