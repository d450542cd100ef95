//! Episodic cycling environment: observations, reward, and the two mirrored
//! experience tuples produced by each control step.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biomech::{MuscleName, Plant, Side, SimState};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::rl::Transition;

/// Policy input for one leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub sin_theta: f64,
    pub cos_theta: f64,
    /// rad/s
    pub cadence: f64,
    pub prev_action: Vec<f64>,
}

impl Observation {
    pub fn dim(n_muscles: usize) -> usize {
        3 + n_muscles
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 + self.prev_action.len());
        v.extend([self.sin_theta, self.cos_theta, self.cadence]);
        v.extend_from_slice(&self.prev_action);
        v
    }
}

/// One `(s, a, r, s′)` record from a single leg's point of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceTuple {
    pub s: Observation,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Observation,
}

impl ExperienceTuple {
    pub fn to_transition(&self) -> Transition {
        Transition { obs: self.s.to_vec(), action: self.a.clone(), reward: self.r, next_obs: self.s_next.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub steps: usize,
    pub dt: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { steps: 100, dt: 0.05, beta: 1.0, seed: 0 }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::NonPositiveParameter { name: "steps" });
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::NonPositiveParameter { name: "dt" });
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter { name: "beta", reason: "must be >= 0".into() });
        }
        Ok(())
    }
}

/// Simulator state plus the last action applied to each leg.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub sim: SimState,
    pub prev_right: Vec<f64>,
    pub prev_left: Vec<f64>,
}

impl EnvState {
    pub fn observation(&self, side: Side) -> Observation {
        let prev = match side {
            Side::Right => &self.prev_right,
            Side::Left => &self.prev_left,
        };
        make_observation(&self.sim, prev, side)
    }
}

/// Random start angle with the crank at rest, all activations and previous
/// actions zero.
pub fn reset(plant: &Plant, seed: u64) -> (EnvState, Observation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.random_range(0.0..2.0 * PI);
    let n = plant.n_muscles();
    let state = EnvState { sim: plant.initial_state(angle), prev_right: vec![0.0; n], prev_left: vec![0.0; n] };
    let obs = state.observation(Side::Right);
    (state, obs)
}

/// The left leg sees the crank rotated by π: both trig components flip sign.
pub fn make_observation(state: &SimState, prev_action: &[f64], side: Side) -> Observation {
    let (s, c) = state.crank_angle.sin_cos();
    let sign = match side {
        Side::Right => 1.0,
        Side::Left => -1.0,
    };
    Observation { sin_theta: sign * s, cos_theta: sign * c, cadence: state.cadence, prev_action: prev_action.to_vec() }
}

/// `r = cadence_next − β·Σ aᵢ²`
pub fn reward(cadence_next: f64, action: &[f64], beta: f64) -> f64 {
    cadence_next - beta * action.iter().map(|a| a * a).sum::<f64>()
}

fn check_action(a: &[f64], n: usize) -> Result<()> {
    if a.len() != n {
        return Err(Error::ShapeMismatch { expected: n, got: a.len() });
    }
    if let Some(bad) = a.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("action component {bad} outside [0, 1]")));
    }
    Ok(())
}

/// Applies both legs' actions for one control step and returns the right and
/// mirrored left experience tuples.
pub fn env_step(
    plant: &Plant,
    state: &EnvState,
    a_right: &[f64],
    a_left: &[f64],
    ec: &EpisodeConfig,
) -> Result<(EnvState, ExperienceTuple, ExperienceTuple)> {
    let n = plant.n_muscles();
    check_action(a_right, n)?;
    check_action(a_left, n)?;
    let controls: Vec<f64> = a_right.iter().chain(a_left).copied().collect();
    let sim = plant.sim_step(&state.sim, &controls, ec.dt)?;
    let next = EnvState { sim, prev_right: a_right.to_vec(), prev_left: a_left.to_vec() };
    let right = ExperienceTuple {
        s: state.observation(Side::Right),
        a: a_right.to_vec(),
        r: reward(next.sim.cadence, a_right, ec.beta),
        s_next: next.observation(Side::Right),
    };
    let left = ExperienceTuple {
        s: state.observation(Side::Left),
        a: a_left.to_vec(),
        r: reward(next.sim.cadence, a_left, ec.beta),
        s_next: next.observation(Side::Left),
    };
    Ok((next, right, left))
}

/// One control step as written to an episode log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Time at the start of the step.
    pub time: f64,
    pub crank_angle: f64,
    pub cadence: f64,
    /// Right-leg muscles, then left.
    pub controls: Vec<f64>,
    pub reward_right: f64,
    pub reward_left: f64,
}

#[derive(Debug, Clone)]
pub struct Episode {
    /// `Σ γᵗ·r_right,t`
    pub ret: f64,
    /// Right then left tuple for every step.
    pub tuples: Vec<ExperienceTuple>,
    pub records: Vec<StepRecord>,
}

/// Runs `ec.steps` control steps from `reset(plant, ec.seed)`, querying
/// `policy` once per leg per step.
pub fn run_episode<P>(plant: &Plant, ec: &EpisodeConfig, gamma: f64, mut policy: P) -> Result<Episode>
where
    P: FnMut(&Observation) -> Result<Vec<f64>>,
{
    ec.validate()?;
    let (mut state, _) = reset(plant, ec.seed);
    let mut ret = 0.0;
    let mut discount = 1.0;
    let mut tuples = Vec::with_capacity(2 * ec.steps);
    let mut records = Vec::with_capacity(ec.steps);
    for _ in 0..ec.steps {
        let a_right = policy(&state.observation(Side::Right))?;
        let a_left = policy(&state.observation(Side::Left))?;
        let (next, right, left) = env_step(plant, &state, &a_right, &a_left, ec)?;
        ret += discount * right.r;
        discount *= gamma;
        records.push(StepRecord {
            time: state.sim.sim_time,
            crank_angle: state.sim.crank_angle,
            cadence: state.sim.cadence,
            controls: a_right.iter().chain(&a_left).copied().collect(),
            reward_right: right.r,
            reward_left: left.r,
        });
        tuples.push(right);
        tuples.push(left);
        state = next;
    }
    Ok(Episode { ret, tuples, records })
}

/// CSV header for per-muscle control columns, right leg first.
pub fn control_columns(n_muscles: usize) -> Vec<String> {
    let names = MuscleName::for_count(n_muscles);
    [Side::Right, Side::Left]
        .iter()
        .flat_map(|side| names.iter().map(move |m| format!("u_{}_{}", side.name(), m.key())))
        .collect()
}

pub fn write_episode_csv<W: Write>(out: W, n_muscles: usize, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string(), "crank_angle".into(), "cadence".into()];
    header.extend(control_columns(n_muscles));
    header.extend(["reward_right".to_string(), "reward_left".into()]);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![sig9(r.time), sig9(r.crank_angle), sig9(r.cadence)];
        row.extend(r.controls.iter().map(|&u| sig9(u)));
        row.extend([sig9(r.reward_right), sig9(r.reward_left)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
