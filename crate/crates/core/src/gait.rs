//! Low-level locomotion: trot gait, planar leg inverse kinematics, servo
//! calibration and the single HL→LL command channel.
//!
//! Joints are ordered as 4 legs (front-left, front-right, rear-left, rear-right)
//! × (shoulder, thigh, shin).

use crate::geometry::Twist2;
use std::f64::consts::PI;
use std::sync::mpsc::{self, Receiver, SyncSender};
use thiserror::Error;

pub const LEG_COUNT: usize = 4;
pub const JOINT_COUNT: usize = 12;
pub const SERVO_MAX_DEG: f64 = 180.0;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "fl_shoulder",
    "fl_thigh",
    "fl_shin",
    "fr_shoulder",
    "fr_thigh",
    "fr_shin",
    "rl_shoulder",
    "rl_thigh",
    "rl_shin",
    "rr_shoulder",
    "rr_thigh",
    "rr_shin",
];

/// Trot pairs: FL+RR share phase offset 0, FR+RL run half a cycle later.
const LEG_PHASE_OFFSET: [f64; LEG_COUNT] = [0.0, 0.5, 0.5, 0.0];

#[derive(Debug, Error, PartialEq)]
pub enum GaitError {
    #[error("foot target ({forward:.4}, {down:.4}) m is outside the leg workspace")]
    OutOfWorkspace { forward: f64, down: f64 },
    #[error("invalid gait parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("joint `{0}` listed more than once")]
    Duplicate(String),
    #[error("joint `{0}` missing")]
    Missing(&'static str),
    #[error("joint `{joint}`: zero + offset = {value} is outside [0, 180]")]
    OutOfRange { joint: &'static str, value: f64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame is {0} bytes, expected {FRAME_LEN}")]
    WrongLength(usize),
    #[error("bad sync byte {0:#04x}")]
    BadSync(u8),
    #[error("checksum mismatch: frame says {stated:#04x}, payload sums to {computed:#04x}")]
    BadChecksum { stated: u8, computed: u8 },
    #[error("joint {joint} angle {value} exceeds 180")]
    AngleOutOfRange { joint: usize, value: u8 },
}

/// Uncalibrated joint targets in degrees, as produced by the gait.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointAngles(pub [f64; JOINT_COUNT]);

/// Servo targets in whole degrees, each within the 180° range of motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ServoCommand {
    angles: [u8; JOINT_COUNT],
}

impl ServoCommand {
    pub fn new(angles: [u8; JOINT_COUNT]) -> Option<Self> {
        angles.iter().all(|a| *a as f64 <= SERVO_MAX_DEG).then_some(Self { angles })
    }

    pub fn angles(&self) -> &[u8; JOINT_COUNT] {
        &self.angles
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    pub zero_pose: [f64; JOINT_COUNT],
    pub offsets: [f64; JOINT_COUNT],
}

impl Default for CalibrationTable {
    fn default() -> Self {
        Self {
            zero_pose: [90.0; JOINT_COUNT],
            offsets: [0.0; JOINT_COUNT],
        }
    }
}

impl CalibrationTable {
    pub fn new(zero_pose: [f64; JOINT_COUNT], offsets: [f64; JOINT_COUNT]) -> Result<Self, CalibrationError> {
        for j in 0..JOINT_COUNT {
            let v = zero_pose[j] + offsets[j];
            if !(0.0..=SERVO_MAX_DEG).contains(&v) {
                return Err(CalibrationError::OutOfRange {
                    joint: JOINT_NAMES[j],
                    value: v,
                });
            }
        }
        Ok(Self { zero_pose, offsets })
    }

    /// Parse 12 lines of `joint_name zero offset` (any order, `#` comments).
    pub fn parse(text: &str) -> Result<Self, CalibrationError> {
        let mut zero = [f64::NAN; JOINT_COUNT];
        let mut offs = [f64::NAN; JOINT_COUNT];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(CalibrationError::Parse {
                    line: i + 1,
                    msg: "expected `joint_name zero offset`".into(),
                });
            }
            let j = JOINT_NAMES
                .iter()
                .position(|n| *n == parts[0])
                .ok_or_else(|| CalibrationError::UnknownJoint(parts[0].to_string()))?;
            if !zero[j].is_nan() {
                return Err(CalibrationError::Duplicate(parts[0].to_string()));
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|e| CalibrationError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            };
            zero[j] = num(parts[1])?;
            offs[j] = num(parts[2])?;
        }
        if let Some(j) = zero.iter().position(|v| v.is_nan()) {
            return Err(CalibrationError::Missing(JOINT_NAMES[j]));
        }
        Self::new(zero, offs)
    }

    pub fn to_text(&self) -> String {
        JOINT_NAMES
            .iter()
            .enumerate()
            .map(|(j, n)| format!("{n} {} {}\n", self.zero_pose[j], self.offsets[j]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitParams {
    /// s
    pub cycle_period: f64,
    pub duty_factor: f64,
    /// m
    pub step_height: f64,
    /// neutral hip-to-foot height, m
    pub stance_depth: f64,
    pub l1: f64,
    pub l2: f64,
    /// shoulder deflection per unit lateral hip speed, deg/(m/s)
    pub shoulder_gain: f64,
    /// hip positions in the body frame, m, in leg order
    pub hips: [[f64; 2]; LEG_COUNT],
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            cycle_period: 0.6,
            duty_factor: 0.5,
            step_height: 0.012,
            stance_depth: 0.13,
            l1: 0.09,
            l2: 0.09,
            shoulder_gain: 30.0,
            hips: [[0.14, 0.06], [0.14, -0.06], [-0.14, 0.06], [-0.14, -0.06]],
        }
    }
}

impl GaitParams {
    pub fn validate(&self) -> Result<(), GaitError> {
        if !(self.duty_factor > 0.0 && self.duty_factor < 1.0) {
            return Err(GaitError::InvalidParams("duty_factor must be in (0, 1)"));
        }
        if !(self.cycle_period > 0.0) {
            return Err(GaitError::InvalidParams("cycle_period must be positive"));
        }
        if !(self.l1 > 0.0 && self.l2 > 0.0) {
            return Err(GaitError::InvalidParams("link lengths must be positive"));
        }
        if !(self.step_height >= 0.0 && self.step_height < self.l1 + self.l2 - self.stance_depth) {
            return Err(GaitError::InvalidParams("step_height must be below l1 + l2 - stance_depth"));
        }
        Ok(())
    }
}

/// Planar two-link IK for a foot at (`forward`, `down`) from the hip, knee-backward branch.
///
/// Returns (thigh, shin) in degrees: thigh measured from straight down (positive
/// forward), shin the knee bend (0 = fully extended).
pub fn leg_ik(forward: f64, down: f64, l1: f64, l2: f64) -> Result<(f64, f64), GaitError> {
    let r2 = forward * forward + down * down;
    let r = r2.sqrt();
    let tol = 1e-12 * (l1 + l2);
    if r > l1 + l2 + tol || r < (l1 - l2).abs() - tol || !r.is_finite() {
        return Err(GaitError::OutOfWorkspace { forward, down });
    }
    let cos_knee = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let shin = cos_knee.acos();
    let reach = forward.atan2(down);
    let thigh = reach - (l2 * shin.sin()).atan2(l1 + l2 * shin.cos());
    Ok((thigh.to_degrees(), shin.to_degrees()))
}

/// Forward kinematics matching [`leg_ik`]'s conventions; returns (forward, down).
pub fn leg_fk(thigh_deg: f64, shin_deg: f64, l1: f64, l2: f64) -> (f64, f64) {
    let t = thigh_deg.to_radians();
    let k = t + shin_deg.to_radians();
    (l1 * t.sin() + l2 * k.sin(), l1 * t.cos() + l2 * k.cos())
}

/// Normalized horizontal sweep (+1 → -1 during stance, back to +1 in swing) and lift ∈ [0, 1].
fn foot_profile(leg_phase: f64, duty: f64) -> (f64, f64) {
    if leg_phase < duty {
        (1.0 - 2.0 * leg_phase / duty, 0.0)
    } else {
        let s = (leg_phase - duty) / (1.0 - duty);
        (-1.0 + 2.0 * s, (PI * s).sin())
    }
}

/// Joint targets for a diagonal-pair trot at gait `phase` (period 1).
pub fn twist_to_joints(cmd: &Twist2, phase: f64, params: &GaitParams) -> Result<JointAngles, GaitError> {
    let moving = !cmd.is_zero();
    let stance_time = params.duty_factor * params.cycle_period;
    let mut out = [0.0; JOINT_COUNT];
    for leg in 0..LEG_COUNT {
        let [hx, hy] = params.hips[leg];
        let v_fwd = cmd.vx - cmd.wz * hy;
        let v_lat = cmd.vy + cmd.wz * hx;
        let leg_phase = (phase + LEG_PHASE_OFFSET[leg]).rem_euclid(1.0);
        let (sweep, lift) = if moving {
            foot_profile(leg_phase, params.duty_factor)
        } else {
            (0.0, 0.0)
        };
        let forward = 0.5 * v_fwd * stance_time * sweep;
        let down = params.stance_depth - params.step_height * lift;
        let (thigh, shin) = leg_ik(forward, down, params.l1, params.l2)?;
        out[3 * leg] = params.shoulder_gain * v_lat * sweep;
        out[3 * leg + 1] = thigh;
        out[3 * leg + 2] = shin;
    }
    Ok(JointAngles(out))
}

/// Add calibration and clamp into the servo range of motion.
pub fn apply_calibration(raw: &JointAngles, cal: &CalibrationTable) -> ServoCommand {
    let mut angles = [0u8; JOINT_COUNT];
    for j in 0..JOINT_COUNT {
        let v = raw.0[j] + cal.zero_pose[j] + cal.offsets[j];
        // NaN clamps to 0 through the saturating cast
        angles[j] = v.clamp(0.0, SERVO_MAX_DEG).round() as u8;
    }
    ServoCommand { angles }
}

pub const FRAME_SYNC: u8 = 0xA5;
pub const FRAME_LEN: usize = 2 + JOINT_COUNT;

fn checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0u8, |acc, b| acc.wrapping_add(*b))
}

/// `A5 | 12 angle bytes | sum(angles) mod 256`
pub fn ll_encode(cmd: &ServoCommand) -> [u8; FRAME_LEN] {
    let mut f = [0u8; FRAME_LEN];
    f[0] = FRAME_SYNC;
    f[1..=JOINT_COUNT].copy_from_slice(&cmd.angles);
    f[FRAME_LEN - 1] = checksum(&cmd.angles);
    f
}

pub fn ll_decode(frame: &[u8]) -> Result<ServoCommand, FrameError> {
    if frame.len() != FRAME_LEN {
        return Err(FrameError::WrongLength(frame.len()));
    }
    if frame[0] != FRAME_SYNC {
        return Err(FrameError::BadSync(frame[0]));
    }
    let payload = &frame[1..=JOINT_COUNT];
    let computed = checksum(payload);
    let stated = frame[FRAME_LEN - 1];
    if computed != stated {
        return Err(FrameError::BadChecksum { stated, computed });
    }
    let mut angles = [0u8; JOINT_COUNT];
    angles.copy_from_slice(payload);
    if let Some(joint) = angles.iter().position(|a| *a as f64 > SERVO_MAX_DEG) {
        return Err(FrameError::AngleOutOfRange {
            joint,
            value: angles[joint],
        });
    }
    Ok(ServoCommand { angles })
}

/// High-level end of the HL→LL link. Frames are the only thing that crosses it.
pub struct HlLink {
    tx: SyncSender<Vec<u8>>,
}

impl HlLink {
    pub fn send(&self, cmd: &ServoCommand) -> bool {
        self.tx.send(ll_encode(cmd).to_vec()).is_ok()
    }

    /// Push arbitrary bytes down the link (for fault injection).
    pub fn send_raw(&self, bytes: Vec<u8>) -> bool {
        self.tx.send(bytes).is_ok()
    }
}

/// Low-level controller: decodes frames and holds the last accepted servo targets.
pub struct LowLevelController {
    rx: Receiver<Vec<u8>>,
    pub current: Option<ServoCommand>,
    pub accepted: u64,
    pub rejected: u64,
}

impl LowLevelController {
    /// Drain frames until the HL end hangs up.
    pub fn run(mut self) -> Self {
        while let Ok(frame) = self.rx.recv() {
            self.handle(&frame);
        }
        self
    }

    pub fn try_drain(&mut self) {
        while let Ok(frame) = self.rx.try_recv() {
            self.handle(&frame);
        }
    }

    fn handle(&mut self, frame: &[u8]) {
        match ll_decode(frame) {
            Ok(cmd) => {
                self.current = Some(cmd);
                self.accepted += 1;
            }
            Err(_) => self.rejected += 1,
        }
    }
}

pub fn ll_link(capacity: usize) -> (HlLink, LowLevelController) {
    let (tx, rx) = mpsc::sync_channel(capacity);
    (
        HlLink { tx },
        LowLevelController {
            rx,
            current: None,
            accepted: 0,
            rejected: 0,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ik_boundary_and_right_angle() {
        let (t, s) = leg_ik(0.0, 0.18, 0.09, 0.09).unwrap();
        assert!(t.abs() < 1e-9 && s.abs() < 1e-6, "{t} {s}");
        let l: f64 = 0.09;
        let (_, s) = leg_ik(0.0, (2.0 * l * l).sqrt(), l, l).unwrap();
        assert!((s - 90.0).abs() < 1e-9);
    }

    #[test]
    fn ik_rejects_unreachable() {
        assert!(matches!(leg_ik(0.2, 0.1, 0.09, 0.09), Err(GaitError::OutOfWorkspace { .. })));
        assert!(leg_ik(0.0, 0.01, 0.12, 0.05).is_err());
    }

    #[test]
    fn knee_points_backward() {
        let (t, s) = leg_ik(0.0, 0.13, 0.09, 0.09).unwrap();
        assert!(t < 0.0 && s > 0.0);
    }

    #[test]
    fn zero_command_is_neutral_at_every_phase() {
        let p = GaitParams::default();
        let a = twist_to_joints(&Twist2::ZERO, 0.0, &p).unwrap();
        for k in 1..20 {
            assert_eq!(twist_to_joints(&Twist2::ZERO, k as f64 / 20.0, &p).unwrap(), a);
        }
        let (t, s) = leg_ik(0.0, p.stance_depth, p.l1, p.l2).unwrap();
        for leg in 0..LEG_COUNT {
            assert_eq!(a.0[3 * leg], 0.0);
            assert_eq!(a.0[3 * leg + 1], t);
            assert_eq!(a.0[3 * leg + 2], s);
        }
    }

    /// Oracle: re-evaluate each leg's foot trajectory directly and compare pairs.
    #[test]
    fn diagonal_pairs_swap_half_cycle_apart() {
        let p = GaitParams::default();
        let cmd = Twist2::new(0.1, 0.0, 0.0);
        let a = twist_to_joints(&cmd, 0.0, &p).unwrap();
        let b = twist_to_joints(&cmd, 0.5, &p).unwrap();
        let leg = |j: &JointAngles, l: usize| [j.0[3 * l], j.0[3 * l + 1], j.0[3 * l + 2]];
        // FL and RR move together; FR and RL move together
        assert_eq!(leg(&a, 0), leg(&a, 3));
        assert_eq!(leg(&a, 1), leg(&a, 2));
        assert_ne!(leg(&a, 0), leg(&a, 1));
        // half a cycle later the pairs have traded roles
        assert_eq!(leg(&a, 0), leg(&b, 1));
        assert_eq!(leg(&a, 1), leg(&b, 0));
        // at phase 0 the FL foot starts stance at the front of its stride
        let (fwd, down) = leg_fk(a.0[1], a.0[2], p.l1, p.l2);
        let half_stride = 0.5 * 0.1 * p.duty_factor * p.cycle_period;
        assert!((fwd - half_stride).abs() < 1e-9 && (down - p.stance_depth).abs() < 1e-9);
    }

    #[test]
    fn calibration_examples() {
        let cal = CalibrationTable::default();
        assert_eq!(
            apply_calibration(&JointAngles([0.0; JOINT_COUNT]), &cal).angles(),
            &[90u8; JOINT_COUNT]
        );
        assert_eq!(
            apply_calibration(&JointAngles([100.0; JOINT_COUNT]), &cal).angles(),
            &[180u8; JOINT_COUNT]
        );
        assert_eq!(
            apply_calibration(&JointAngles([-120.0; JOINT_COUNT]), &cal).angles(),
            &[0u8; JOINT_COUNT]
        );
    }

    #[test]
    fn calibration_fixture_matches_hand_sums() {
        let text = "# servo zero and trim\n\
            fl_shoulder 90 -3\nfl_thigh 85 2.5\nfl_shin 40 0\n\
            fr_shoulder 92 1\nfr_thigh 95 -2\nfr_shin 42 -1\n\
            rl_shoulder 88 4\nrl_thigh 90 0\nrl_shin 38 3\n\
            rr_shoulder 90 0\nrr_thigh 87 -4\nrr_shin 41 1\n";
        let cal = CalibrationTable::parse(text).unwrap();
        let raw = JointAngles([5.0, -30.0, 60.0, -5.0, 10.0, 150.0, 0.0, -100.0, 20.4, 0.0, 0.0, 0.0]);
        // 90-3+5, 85+2.5-30, 40+60, 92+1-5, 95-2+10, 42-1+150→180, 88+4, 90-100→0, 38+3+20.4, 90, 87-4, 41+1
        let expected = [92u8, 58, 100, 88, 103, 180, 92, 0, 61, 90, 83, 42];
        assert_eq!(apply_calibration(&raw, &cal).angles(), &expected);
        assert_eq!(CalibrationTable::parse(&cal.to_text()).unwrap(), cal);
    }

    #[test]
    fn calibration_file_errors() {
        assert!(matches!(
            CalibrationTable::parse("fl_shoulder 90 0\n"),
            Err(CalibrationError::Missing("fl_thigh"))
        ));
        assert!(matches!(
            CalibrationTable::parse("elbow 90 0\n"),
            Err(CalibrationError::UnknownJoint(_))
        ));
        let mut text = CalibrationTable::default().to_text();
        text.push_str("fl_shin 90 0\n");
        assert!(matches!(CalibrationTable::parse(&text), Err(CalibrationError::Duplicate(_))));
        let bad = CalibrationTable::default().to_text().replace("rr_shin 90 0", "rr_shin 170 20");
        assert!(matches!(CalibrationTable::parse(&bad), Err(CalibrationError::OutOfRange { .. })));
    }

    #[test]
    fn frame_examples() {
        let zero = ServoCommand::new([0; JOINT_COUNT]).unwrap();
        let f = ll_encode(&zero);
        let mut expected = [0u8; FRAME_LEN];
        expected[0] = 0xA5;
        assert_eq!(f, expected);
        assert_eq!(ll_decode(&f).unwrap(), zero);

        let cmd = ServoCommand::new([10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 180]).unwrap();
        let f = ll_encode(&cmd);
        assert_eq!(f[FRAME_LEN - 1], (840u32 % 256) as u8);
        let mut flipped = f;
        flipped[3] ^= 0x04;
        assert!(matches!(ll_decode(&flipped), Err(FrameError::BadChecksum { .. })));
        let mut sync = f;
        sync[0] = 0x5A;
        assert_eq!(ll_decode(&sync), Err(FrameError::BadSync(0x5A)));
        assert_eq!(ll_decode(&f[..13]), Err(FrameError::WrongLength(13)));
        let mut big = [0u8; FRAME_LEN];
        big[0] = FRAME_SYNC;
        big[5] = 200;
        big[FRAME_LEN - 1] = 200;
        assert!(matches!(ll_decode(&big), Err(FrameError::AngleOutOfRange { joint: 4, .. })));
        assert!(ServoCommand::new([181; JOINT_COUNT]).is_none());
    }

    #[test]
    fn link_carries_frames_and_counts_rejects() {
        let (hl, ll) = ll_link(8);
        let handle = std::thread::spawn(move || ll.run());
        let cmd = ServoCommand::new([45; JOINT_COUNT]).unwrap();
        assert!(hl.send(&cmd));
        assert!(hl.send_raw(vec![0xA5, 1, 2]));
        drop(hl);
        let ll = handle.join().unwrap();
        assert_eq!(ll.current, Some(cmd));
        assert_eq!((ll.accepted, ll.rejected), (1, 1));
    }

    #[test]
    fn gait_is_continuous_in_phase() {
        let p = GaitParams::default();
        let dphase = 0.02 / p.cycle_period;
        let lim = crate::geometry::TwistLimits::default();
        let cmds = [
            Twist2::new(lim.max_vx, 0.0, 0.0),
            Twist2::new(-lim.max_vx, lim.max_vy, lim.max_wz),
            Twist2::new(lim.max_vx, -lim.max_vy, -lim.max_wz),
            Twist2::new(0.0, 0.0, lim.max_wz),
        ];
        let mut worst: f64 = 0.0;
        for cmd in cmds {
            let n = 2000;
            for k in 0..n {
                let ph = k as f64 / n as f64;
                let a = twist_to_joints(&cmd, ph, &p).unwrap();
                let b = twist_to_joints(&cmd, ph + dphase, &p).unwrap();
                for j in 0..JOINT_COUNT {
                    worst = worst.max((a.0[j] - b.0[j]).abs());
                }
            }
        }
        assert!(worst < 5.0, "max joint jump {worst}°");
    }

    proptest! {
        #[test]
        fn fk_inverts_ik(r in 0.001..0.18f64, ang in -1.5..1.5f64) {
            let (fwd, down) = (r * ang.sin(), r * ang.cos());
            let (t, s) = leg_ik(fwd, down, 0.09, 0.09).unwrap();
            let (f2, d2) = leg_fk(t, s, 0.09, 0.09);
            prop_assert!((f2 - fwd).abs() < 1e-9 && (d2 - down).abs() < 1e-9);
        }

        #[test]
        fn fk_inverts_ik_unequal_links(l1 in 0.05..0.15f64, l2 in 0.05..0.15f64, u in 0.0..1.0f64, ang in -3.0..3.0f64) {
            let lo = (l1 - l2).abs();
            let r = lo + (l1 + l2 - lo) * u;
            let (fwd, down) = (r * ang.sin(), r * ang.cos());
            let (t, s) = leg_ik(fwd, down, l1, l2).unwrap();
            let (f2, d2) = leg_fk(t, s, l1, l2);
            prop_assert!((f2 - fwd).abs() < 1e-9 && (d2 - down).abs() < 1e-9);
        }

        #[test]
        fn gait_is_periodic(vx in -0.3..0.3f64, vy in -0.3..0.3f64, wz in -1.0..1.0f64, ph in 0.0..1.0f64) {
            let p = GaitParams::default();
            let cmd = Twist2::new(vx, vy, wz);
            let a = twist_to_joints(&cmd, ph, &p).unwrap();
            let b = twist_to_joints(&cmd, ph + 1.0, &p).unwrap();
            for j in 0..JOINT_COUNT {
                prop_assert!((a.0[j] - b.0[j]).abs() < 1e-6);
            }
        }

        #[test]
        fn frame_round_trip(angles in proptest::array::uniform12(0u8..=180)) {
            let cmd = ServoCommand::new(angles).unwrap();
            prop_assert_eq!(ll_decode(&ll_encode(&cmd)).unwrap(), cmd);
        }

        #[test]
        fn servo_output_stays_in_range(
            vx in -0.3..0.3f64, vy in -0.3..0.3f64, wz in -1.0..1.0f64, ph in 0.0..1.0f64,
            zero in proptest::array::uniform12(0.0..180.0f64),
            frac in proptest::array::uniform12(0.0..1.0f64),
        ) {
            let mut offsets = [0.0; JOINT_COUNT];
            for j in 0..JOINT_COUNT {
                offsets[j] = -zero[j] + frac[j] * 180.0;
            }
            let cal = CalibrationTable::new(zero, offsets).unwrap();
            let raw = twist_to_joints(&Twist2::new(vx, vy, wz), ph, &GaitParams::default()).unwrap();
            let cmd = apply_calibration(&raw, &cal);
            prop_assert!(cmd.angles().iter().all(|a| *a <= 180));
        }
    }
}
