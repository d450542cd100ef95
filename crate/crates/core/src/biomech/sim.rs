use std::cell::Cell;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::biomech::config::{wrap_angle, ValidatedConfig};
use crate::biomech::gap::RealityGapConfig;
use crate::biomech::kinematics::{joint_jacobian, solve_leg_ik, JointAngles, Side};
use crate::biomech::muscle::{activation_step, default_muscles, muscle_joint_torques, MuscleParams};
use crate::error::{Error, Result};

/// Control interval used by the RL interface.
pub const CONTROL_DT: f64 = 0.05;
/// Inner integration step.
pub const INNER_DT: f64 = 1e-3;
/// Below this cadence a crank whose drive cannot beat Coulomb friction is held at rest.
pub const STICTION_SPEED: f64 = 1e-3;

thread_local! {
    static SIM_STEPS: Cell<u64> = const { Cell::new(0) };
}

/// Number of control steps simulated on the current thread so far.
pub fn sim_step_count() -> u64 {
    SIM_STEPS.with(Cell::get)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Right crank angle in `[0, 2π)`.
    pub crank_angle: f64,
    /// rad/s
    pub cadence: f64,
    /// Right-leg muscles first, then left.
    pub activations: Vec<f64>,
    pub sim_time: f64,
}

impl SimState {
    pub fn at_rest(crank_angle: f64, n_muscles_per_leg: usize) -> Self {
        Self {
            crank_angle: wrap_angle(crank_angle),
            cadence: 0.0,
            activations: vec![0.0; 2 * n_muscles_per_leg],
            sim_time: 0.0,
        }
    }

    pub fn kinetic_energy(&self, inertia: f64) -> f64 {
        0.5 * inertia * self.cadence * self.cadence
    }
}

/// A validated cycling configuration together with the muscles acting on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    config: ValidatedConfig,
    muscles: Vec<MuscleParams>,
}

impl Plant {
    /// Builds the plant with default muscles; applies the default reality gap
    /// when the config carries a `perturbation_seed`.
    pub fn new(config: ValidatedConfig) -> Self {
        let muscles = default_muscles(config.n_muscles_per_leg);
        let plant = Self { config, muscles };
        match plant.config.perturbation_seed {
            Some(seed) => RealityGapConfig { seed, ..Default::default() }
                .apply(&plant)
                .expect("default reality gap keeps a valid config"),
            None => plant,
        }
    }

    pub fn with_muscles(config: ValidatedConfig, muscles: Vec<MuscleParams>) -> Result<Self> {
        if muscles.len() != config.n_muscles_per_leg {
            return Err(Error::ShapeMismatch { expected: config.n_muscles_per_leg, got: muscles.len() });
        }
        for m in &muscles {
            if !(m.t_max > 0.0) {
                return Err(Error::NonPositiveParameter { name: "t_max" });
            }
            if !(m.activation_tau > 0.0) {
                return Err(Error::NonPositiveParameter { name: "activation_tau" });
            }
        }
        Ok(Self { config, muscles })
    }

    pub fn config(&self) -> &ValidatedConfig {
        &self.config
    }

    pub fn muscles(&self) -> &[MuscleParams] {
        &self.muscles
    }

    pub fn n_muscles(&self) -> usize {
        self.muscles.len()
    }

    pub fn initial_state(&self, crank_angle: f64) -> SimState {
        SimState::at_rest(crank_angle, self.n_muscles())
    }

    /// Torque one leg's muscles apply at the crank, by virtual work.
    pub fn leg_crank_torque(&self, crank_angle: f64, cadence: f64, side: Side, activations: &[f64]) -> f64 {
        let joints = solve_leg_ik(&self.config, crank_angle, side);
        let rates = joint_jacobian(&self.config, crank_angle, side);
        let velocities = JointAngles { hip: rates.dhip * cadence, knee: rates.dknee * cadence };
        self.muscles
            .iter()
            .zip(activations)
            .map(|(m, &a)| {
                let t = muscle_joint_torques(m, a, joints, velocities);
                t.hip * rates.dhip + t.knee * rates.dknee
            })
            .sum()
    }

    /// Net muscle torque at the crank, summed over both legs.
    pub fn crank_torque(&self, state: &SimState) -> f64 {
        let n = self.n_muscles();
        let (right, left) = state.activations.split_at(n);
        self.leg_crank_torque(state.crank_angle, state.cadence, Side::Right, right)
            + self.leg_crank_torque(state.crank_angle, state.cadence, Side::Left, left)
    }

    /// Advances the plant by `dt_control` holding `controls` constant.
    pub fn sim_step(&self, state: &SimState, controls: &[f64], dt_control: f64) -> Result<SimState> {
        self.sim_step_assisted(state, controls, dt_control, None)
    }

    /// [`Plant::sim_step`] with an optional start-up motor acting on the crank.
    pub fn sim_step_assisted(
        &self,
        state: &SimState,
        controls: &[f64],
        dt_control: f64,
        assist: Option<&StartAssist>,
    ) -> Result<SimState> {
        let n = 2 * self.n_muscles();
        if controls.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: controls.len() });
        }
        if !(dt_control > 0.0) {
            return Err(Error::NonPositiveParameter { name: "dt_control" });
        }
        SIM_STEPS.with(|c| c.set(c.get() + 1));

        let cfg = self.config.get();
        let substeps = ((dt_control / INNER_DT).round() as usize).max(1);
        let dt = dt_control / substeps as f64;
        let mut next = state.clone();
        let start_time = state.sim_time;
        let taus: Vec<f64> = self.muscles.iter().chain(self.muscles.iter()).map(|m| m.activation_tau).collect();

        for k in 0..substeps {
            for ((a, &u), &tau) in next.activations.iter_mut().zip(controls).zip(&taus) {
                *a = activation_step(*a, u.clamp(0.0, 1.0), dt, tau);
            }
            let motor = assist.map_or(0.0, |m| m.torque(next.sim_time, next.cadence));
            let drive = self.crank_torque(&next) + motor;
            next.cadence = integrate_cadence(next.cadence, drive, dt, cfg.crank_inertia, cfg.resistance_coulomb, cfg.resistance_viscous);
            next.crank_angle = wrap_angle(next.crank_angle + dt * next.cadence);
            next.sim_time = start_time + (k + 1) as f64 * dt;
        }
        if !next.cadence.is_finite() || !next.crank_angle.is_finite() {
            return Err(Error::NonFiniteState { sim_time: next.sim_time });
        }
        Ok(next)
    }
}

/// Motor that spins the crank up towards `cadence` during the first
/// `duration_s` seconds of a session, standing in for a manual or motorised
/// assisted start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StartAssist {
    pub duration_s: f64,
    /// rad/s
    pub cadence: f64,
    /// N·m per rad/s
    pub gain: f64,
    /// N·m
    pub max_torque: f64,
}

impl Default for StartAssist {
    fn default() -> Self {
        Self { duration_s: 1.0, cadence: 5.0, gain: 60.0, max_torque: 30.0 }
    }
}

impl StartAssist {
    /// Proportional speed control, saturated, switched off after `duration_s`.
    pub fn torque(&self, time: f64, cadence: f64) -> f64 {
        if time >= self.duration_s - 1e-12 {
            return 0.0;
        }
        (self.gain * (self.cadence - cadence)).clamp(-self.max_torque, self.max_torque)
    }
}

/// One semi-implicit Euler step of `I·ω̇ = T − sign(ω)·c − b·ω`.
///
/// Viscous damping is taken implicitly; Coulomb friction never reverses the
/// direction of motion and holds the crank when the drive cannot overcome it.
fn integrate_cadence(omega: f64, drive: f64, dt: f64, inertia: f64, coulomb: f64, viscous: f64) -> f64 {
    let moving = omega.abs() >= STICTION_SPEED;
    if !moving && drive.abs() <= coulomb {
        return 0.0;
    }
    let friction_dir = if moving { omega.signum() } else { drive.signum() };
    let next = (omega + dt * (drive - coulomb * friction_dir) / inertia) / (1.0 + dt * viscous / inertia);
    // a crossing through zero stops the crank for this substep
    if next.signum() != friction_dir {
        0.0
    } else {
        next
    }
}

/// Revolutions per minute from rad/s.
pub fn to_rpm(cadence: f64) -> f64 {
    cadence * 60.0 / (2.0 * PI)
}
