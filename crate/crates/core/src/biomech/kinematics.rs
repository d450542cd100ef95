//! Closed-chain leg geometry: hip fixed to the seat, foot fixed to the pedal,
//! ankle locked, so each leg is a two-link chain from hip to pedal.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::biomech::config::CyclingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Right,
    Left,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Right => "right",
            Side::Left => "left",
        }
    }

    /// Crank phase of this leg's pedal given the right crank angle.
    pub fn phase(self, crank_angle: f64) -> f64 {
        match self {
            Side::Right => crank_angle,
            Side::Left => crank_angle + PI,
        }
    }
}

/// Hip and knee angles of one leg.
///
/// `knee` is the interior angle between thigh and shank: 0 fully folded,
/// π fully extended. `hip` is the thigh direction measured from the
/// backrest direction; it grows with hip extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAngles {
    pub hip: f64,
    pub knee: f64,
}

/// Joint positions of a solved leg, in the crank frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPose {
    pub joints: JointAngles,
    /// Absolute thigh direction (world frame).
    pub thigh_angle: f64,
    pub knee_pos: [f64; 2],
}

pub fn pedal_position(config: &CyclingConfig, crank_angle: f64, side: Side) -> [f64; 2] {
    let phase = side.phase(crank_angle);
    [config.crank_arm * phase.cos(), config.crank_arm * phase.sin()]
}

/// Law-of-cosines solution of the hip→target two-link chain, with the knee on
/// the clockwise side of the hip→target line (above it for a rider facing −x).
///
/// Returns `(thigh_angle, knee_angle)`. The target must lie strictly inside the
/// reachable annulus.
pub fn solve_two_link(hip: [f64; 2], target: [f64; 2], thigh: f64, shank: f64) -> (f64, f64) {
    let dx = target[0] - hip[0];
    let dy = target[1] - hip[1];
    let dist2 = dx * dx + dy * dy;
    let dist = dist2.sqrt();
    let cos_knee = ((thigh * thigh + shank * shank - dist2) / (2.0 * thigh * shank)).clamp(-1.0, 1.0);
    let cos_alpha = ((thigh * thigh + dist2 - shank * shank) / (2.0 * thigh * dist)).clamp(-1.0, 1.0);
    let direction = dy.atan2(dx);
    (direction - cos_alpha.acos(), cos_knee.acos())
}

pub fn solve_leg(config: &CyclingConfig, crank_angle: f64, side: Side) -> LegPose {
    let hip = config.hip();
    let pedal = pedal_position(config, crank_angle, side);
    let (thigh_angle, knee) = solve_two_link(hip, pedal, config.thigh_len, config.shank_len);
    LegPose {
        joints: JointAngles { hip: hip_joint_angle(config, thigh_angle), knee },
        thigh_angle,
        knee_pos: [
            hip[0] + config.thigh_len * thigh_angle.cos(),
            hip[1] + config.thigh_len * thigh_angle.sin(),
        ],
    }
}

/// Two-link inverse kinematics for one leg.
pub fn solve_leg_ik(config: &CyclingConfig, crank_angle: f64, side: Side) -> JointAngles {
    solve_leg(config, crank_angle, side).joints
}

fn hip_joint_angle(config: &CyclingConfig, thigh_angle: f64) -> f64 {
    (thigh_angle - config.seat_angle).rem_euclid(2.0 * PI)
}

/// Ankle (pedal) position reached by the given joint angles.
pub fn forward_kinematics(config: &CyclingConfig, joints: JointAngles) -> [f64; 2] {
    let hip = config.hip();
    let thigh_angle = joints.hip + config.seat_angle;
    let knee = [
        hip[0] + config.thigh_len * thigh_angle.cos(),
        hip[1] + config.thigh_len * thigh_angle.sin(),
    ];
    // interior angle π means the shank continues along the thigh; the knee
    // bends counter-clockwise for the chosen branch
    let shank_angle = thigh_angle + (PI - joints.knee);
    [
        knee[0] + config.shank_len * shank_angle.cos(),
        knee[1] + config.shank_len * shank_angle.sin(),
    ]
}

/// Derivatives of the joint angles with respect to crank angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointRates {
    pub dhip: f64,
    pub dknee: f64,
}

pub fn joint_jacobian(config: &CyclingConfig, crank_angle: f64, side: Side) -> JointRates {
    let (l1, l2) = (config.thigh_len, config.shank_len);
    let hip = config.hip();
    let phase = side.phase(crank_angle);
    let pedal = [config.crank_arm * phase.cos(), config.crank_arm * phase.sin()];
    let dpedal = [-config.crank_arm * phase.sin(), config.crank_arm * phase.cos()];
    let d = [pedal[0] - hip[0], pedal[1] - hip[1]];
    let dist2 = d[0] * d[0] + d[1] * d[1];
    let dist = dist2.sqrt();

    let ddist = (d[0] * dpedal[0] + d[1] * dpedal[1]) / dist;
    let ddirection = (d[0] * dpedal[1] - d[1] * dpedal[0]) / dist2;

    let cos_knee = (l1 * l1 + l2 * l2 - dist2) / (2.0 * l1 * l2);
    let sin_knee = (1.0 - cos_knee * cos_knee).max(0.0).sqrt();
    let cos_alpha = (l1 * l1 + dist2 - l2 * l2) / (2.0 * l1 * dist);
    let sin_alpha = (1.0 - cos_alpha * cos_alpha).max(0.0).sqrt();

    let dknee = dist * ddist / (l1 * l2 * sin_knee);
    let dalpha = -(dist2 - l1 * l1 + l2 * l2) / (2.0 * l1 * dist2 * sin_alpha) * ddist;
    JointRates { dhip: ddirection - dalpha, dknee }
}
