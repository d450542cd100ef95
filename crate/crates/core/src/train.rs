//! Episodic SAC training against the simulator with periodic deterministic
//! performance tests and a plateau stopping rule.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biomech::Plant;
use crate::env::{run_episode, EpisodeConfig, Observation};
use crate::error::Result;
use crate::fmt::sig9;
use crate::rl::{Agent, ReplayBuffer, SampleMode, TrainConfig, TransitionSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based
    pub episode: usize,
    pub train_return: f64,
    pub test_return: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub curve: Vec<CurvePoint>,
    pub stopped_on_plateau: bool,
}

/// Start-angle seeds: one stream for training episodes, a fixed set for tests.
fn episode_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

fn test_seeds(seed: u64, n: usize) -> Vec<u64> {
    episode_seeds(seed ^ 0x7e57_7e57_7e57_7e57, n)
}

pub fn episode_config(tc: &TrainConfig, seed: u64) -> EpisodeConfig {
    EpisodeConfig { steps: tc.episode_steps, dt: tc.dt, beta: tc.beta, seed }
}

/// Mean discounted return of deterministic episodes from the fixed test starts.
pub fn test_return(agent: &Agent, plant: &Plant) -> Result<f64> {
    let tc = &agent.config;
    let mut total = 0.0;
    for seed in test_seeds(tc.seed, tc.test_episodes) {
        let ep = run_episode(plant, &episode_config(tc, seed), tc.gamma, |o: &Observation| agent.actor.mean_action(&o.to_vec()))?;
        total += ep.ret;
    }
    Ok(total / tc.test_episodes as f64)
}

/// True once the best test return has improved by less than `tolerance`
/// (relative) over the last `window` tests.
pub fn plateau_reached(tests: &[f64], window: usize, tolerance: f64) -> bool {
    if window == 0 || tests.len() <= window {
        return false;
    }
    let best = |xs: &[f64]| xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let before = best(&tests[..tests.len() - window]);
    let now = best(tests);
    before > 0.0 && now - before < tolerance * before
}

/// Trains a fresh agent; `on_episode` sees every curve point as it is produced.
pub fn train(plant: &Plant, tc: &TrainConfig, mut on_episode: impl FnMut(&CurvePoint)) -> Result<TrainOutcome> {
    tc.validate()?;
    let n = plant.n_muscles();
    let mut agent = Agent::new(Observation::dim(n), n, tc.clone());
    let mut buffer = ReplayBuffer::new(ReplayBuffer::DEFAULT_CAPACITY);
    let seeds = episode_seeds(tc.seed, tc.max_episodes);
    let mut curve = Vec::new();
    let mut tests = Vec::new();
    let mut stopped_on_plateau = false;

    for (k, &seed) in seeds.iter().enumerate() {
        let ec = episode_config(tc, seed);
        let ep = run_episode(plant, &ec, tc.gamma, |o: &Observation| agent.act(&o.to_vec(), SampleMode::Stochastic))?;
        for t in &ep.tuples {
            buffer.push(t.to_transition());
        }
        if buffer.len() >= tc.batch_size {
            agent.sac_update(&buffer)?;
        }

        let episode = k + 1;
        let test = if episode % tc.test_every == 0 { Some(test_return(&agent, plant)?) } else { None };
        let point = CurvePoint { episode, train_return: ep.ret, test_return: test };
        on_episode(&point);
        curve.push(point);
        if let Some(t) = test {
            tests.push(t);
            if plateau_reached(&tests, tc.plateau_window, tc.plateau_tolerance) {
                stopped_on_plateau = true;
                break;
            }
        }
    }
    Ok(TrainOutcome { agent, curve, stopped_on_plateau })
}

/// Test returns divided by the plateau level: the mean of the last `window`
/// test returns.
pub fn normalized_test_returns(curve: &[CurvePoint], window: usize) -> Vec<(usize, f64)> {
    let tests: Vec<(usize, f64)> = curve.iter().filter_map(|p| p.test_return.map(|t| (p.episode, t))).collect();
    if tests.is_empty() {
        return tests;
    }
    let tail = &tests[tests.len().saturating_sub(window.max(1))..];
    let plateau = tail.iter().map(|t| t.1).sum::<f64>() / tail.len() as f64;
    tests.iter().map(|&(e, t)| (e, t / plateau)).collect()
}

pub fn write_curve_csv<W: Write>(out: W, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "return", "test_return"])?;
    for p in curve {
        w.write_record([p.episode.to_string(), sig9(p.train_return), p.test_return.map(sig9).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}
