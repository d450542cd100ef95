//! Joint-torque muscle generators: activation lag, a raised-cosine angle
//! profile per spanned joint and a linear force-velocity penalty.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::biomech::kinematics::JointAngles;

/// Default activation time constant (FES-induced activation lag).
pub const ACTIVATION_TAU: f64 = 0.1;

/// Joint speed at which a concentric muscle produces no torque.
pub const MAX_SHORTENING_SPEED: f64 = 15.0;

/// Upper bound of the eccentric force enhancement.
pub const MAX_ECCENTRIC_GAIN: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuscleName {
    Quadriceps,
    Hamstrings,
    GluteusMaximus,
}

impl MuscleName {
    pub const ALL: [MuscleName; 3] = [MuscleName::Quadriceps, MuscleName::Hamstrings, MuscleName::GluteusMaximus];

    /// Stimulated muscles for a two- or three-muscle setup, in control order.
    pub fn for_count(n: usize) -> &'static [MuscleName] {
        &Self::ALL[..n.min(3)]
    }

    pub fn key(self) -> &'static str {
        match self {
            MuscleName::Quadriceps => "quadriceps",
            MuscleName::Hamstrings => "hamstrings",
            MuscleName::GluteusMaximus => "gluteus_maximus",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.key() == key)
    }
}

impl std::fmt::Display for MuscleName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// Signed torque share on one joint as a function of that joint's angle.
///
/// Positive `gain` drives the joint towards extension (angle increasing).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointProfile {
    pub gain: f64,
    /// Angle of peak torque, rad.
    pub q_opt: f64,
    /// Full support width of the bump, rad.
    pub width: f64,
}

impl JointProfile {
    pub fn new(gain: f64, q_opt_deg: f64, width_deg: f64) -> Self {
        Self { gain, q_opt: q_opt_deg.to_radians(), width: width_deg.to_radians() }
    }

    pub fn value(&self, q: f64) -> f64 {
        let x = (q - self.q_opt) / self.width;
        if x.abs() >= 0.5 {
            0.0
        } else {
            self.gain * (PI * x).cos()
        }
    }

    /// Force-velocity factor for joint velocity `qdot`.
    pub fn velocity_factor(&self, qdot: f64) -> f64 {
        force_velocity(self.gain.signum() * qdot)
    }
}

/// `clamp(1 − v/v_max, 0, 1.5)` for shortening velocity `v`.
pub fn force_velocity(shortening_velocity: f64) -> f64 {
    (1.0 - shortening_velocity / MAX_SHORTENING_SPEED).clamp(0.0, MAX_ECCENTRIC_GAIN)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleParams {
    pub name: MuscleName,
    /// Peak joint torque, N·m.
    pub t_max: f64,
    pub activation_tau: f64,
    pub hip: Option<JointProfile>,
    pub knee: Option<JointProfile>,
}

impl MuscleParams {
    pub fn default_for(name: MuscleName) -> Self {
        let (t_max, hip, knee) = match name {
            MuscleName::Quadriceps => (30.0, None, Some(JointProfile::new(1.0, 105.0, 160.0))),
            MuscleName::Hamstrings => (
                20.0,
                Some(JointProfile::new(0.5, 100.0, 160.0)),
                Some(JointProfile::new(-1.0, 110.0, 160.0)),
            ),
            MuscleName::GluteusMaximus => (25.0, Some(JointProfile::new(1.0, 90.0, 140.0)), None),
        };
        Self { name, t_max, activation_tau: ACTIVATION_TAU, hip, knee }
    }
}

/// Default muscle set for a two- or three-muscle configuration.
pub fn default_muscles(n: usize) -> Vec<MuscleParams> {
    MuscleName::for_count(n).iter().map(|&m| MuscleParams::default_for(m)).collect()
}

/// Exact solution of `ȧ = (u − a)/τ` over `dt` with constant excitation `u`.
pub fn activation_step(activation: f64, excitation: f64, dt: f64, tau: f64) -> f64 {
    let decay = (-dt / tau).exp();
    (excitation + (activation - excitation) * decay).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JointTorques {
    pub hip: f64,
    pub knee: f64,
}

pub fn muscle_joint_torques(
    params: &MuscleParams,
    activation: f64,
    joints: JointAngles,
    joint_velocities: JointAngles,
) -> JointTorques {
    let drive = activation * params.t_max;
    let torque = |profile: &Option<JointProfile>, q: f64, qdot: f64| match profile {
        Some(p) => drive * p.value(q) * p.velocity_factor(qdot),
        None => 0.0,
    };
    JointTorques {
        hip: torque(&params.hip, joints.hip, joint_velocities.hip),
        knee: torque(&params.knee, joints.knee, joint_velocities.knee),
    }
}
