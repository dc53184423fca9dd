//! Odometry pipeline: IMU-only Madgwick attitude filter and planar odometry fusion.

use crate::geometry::{wrap_angle, Pose2};
use crate::world::ImuSample;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (angle / 2.0).sin_cos();
        Self {
            w: c,
            x: s * axis[0] / n,
            y: s * axis[1] / n,
            z: s * axis[2] / n,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    /// Heading about world z (ZYX convention).
    pub fn yaw(&self) -> f64 {
        (2.0 * (self.w * self.z + self.x * self.y)).atan2(1.0 - 2.0 * (self.y * self.y + self.z * self.z))
    }

    /// Angle between the body z axis and world z.
    pub fn tilt(&self) -> f64 {
        (1.0 - 2.0 * (self.x * self.x + self.y * self.y)).clamp(-1.0, 1.0).acos()
    }
}

/// One IMU-only Madgwick step: gyro integration corrected by a normalized
/// gradient-descent step toward gravity alignment, scaled by `beta`.
pub fn madgwick_update(q: &Quaternion, imu: &ImuSample, beta: f64, dt: f64) -> Quaternion {
    let Quaternion { w, x, y, z } = *q;
    let [gx, gy, gz] = imu.gyro;
    // q̇ = ½ q ⊗ (0, ω)
    let mut dw = 0.5 * (-x * gx - y * gy - z * gz);
    let mut dx = 0.5 * (w * gx + y * gz - z * gy);
    let mut dy = 0.5 * (w * gy - x * gz + z * gx);
    let mut dz = 0.5 * (w * gz + x * gy - y * gx);

    let [ax, ay, az] = imu.accel;
    let an = (ax * ax + ay * ay + az * az).sqrt();
    if an > 0.0 && an.is_finite() {
        let (ax, ay, az) = (ax / an, ay / an, az / an);
        // objective: predicted gravity direction minus measured
        let f1 = 2.0 * (x * z - w * y) - ax;
        let f2 = 2.0 * (w * x + y * z) - ay;
        let f3 = 2.0 * (0.5 - x * x - y * y) - az;
        // Jᵀ f
        let sw = -2.0 * y * f1 + 2.0 * x * f2;
        let sx = 2.0 * z * f1 + 2.0 * w * f2 - 4.0 * x * f3;
        let sy = -2.0 * w * f1 + 2.0 * z * f2 - 4.0 * y * f3;
        let sz = 2.0 * x * f1 + 2.0 * y * f2;
        let sn = (sw * sw + sx * sx + sy * sy + sz * sz).sqrt();
        if sn > 1e-15 {
            dw -= beta * sw / sn;
            dx -= beta * sx / sn;
            dy -= beta * sy / sn;
            dz -= beta * sz / sn;
        }
    }
    Quaternion {
        w: w + dw * dt,
        x: x + dx * dt,
        y: y + dy * dt,
        z: z + dz * dt,
    }
    .normalized()
}

/// Per-robot Madgwick filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MadgwickFilter {
    pub q: Quaternion,
    pub beta: f64,
}

impl MadgwickFilter {
    pub fn new(beta: f64) -> Self {
        Self {
            q: Quaternion::IDENTITY,
            beta,
        }
    }

    pub fn update(&mut self, imu: &ImuSample, dt: f64) -> Quaternion {
        self.q = madgwick_update(&self.q, imu, self.beta, dt);
        self.q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomState {
    pub pose: Pose2,
    pub timestamp: f64,
}

/// Compose an odometry increment and blend its heading toward the IMU yaw.
///
/// `alpha` = 0 keeps pure odometry; 1 takes the IMU yaw verbatim.
pub fn fuse_odometry(state: &OdomState, odom_delta: &Pose2, imu_yaw: f64, alpha: f64, timestamp: f64) -> OdomState {
    let composed = state.pose.compose(odom_delta);
    let theta = if alpha == 0.0 {
        composed.theta
    } else if alpha == 1.0 {
        wrap_angle(imu_yaw)
    } else {
        composed.theta + alpha * wrap_angle(imu_yaw - composed.theta)
    };
    OdomState {
        pose: Pose2::new(composed.x, composed.y, theta),
        timestamp,
    }
}
