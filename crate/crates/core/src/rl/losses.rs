//! Soft actor-critic objectives and the conservative Q regulariser, each
//! returning its value together with exact parameter gradients.
//!
//! Noise is passed in explicitly so every objective is a deterministic
//! function of the parameters (which is what the gradient checks rely on).

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rl::buffer::Batch;
use crate::rl::mlp::Mlp;
use crate::rl::policy::{log_prob_of_action, Actor, HIDDEN};

/// Twin Q-networks and their Polyak-averaged targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critics {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
}

impl Critics {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, n_actions: usize, rng: &mut R) -> Self {
        let sizes = [obs_dim + n_actions, HIDDEN, HIDDEN, 1];
        let q1 = Mlp::new(&sizes, rng);
        let q2 = Mlp::new(&sizes, rng);
        Self { q1_target: q1.clone(), q2_target: q2.clone(), q1, q2 }
    }

    /// `target ← (1 − τ)·target + τ·online`.
    pub fn polyak_update(&mut self, tau: f64) {
        for (online, target) in [(&self.q1, &mut self.q1_target), (&self.q2, &mut self.q2_target)] {
            for (t, &o) in target.params_mut().iter_mut().zip(online.params()) {
                *t = (1.0 - tau) * *t + tau * o;
            }
        }
    }
}

pub fn join(obs: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Array2<f64> {
    concatenate(Axis(1), &[obs, actions]).expect("matching batch sizes")
}

fn q_values(net: &Mlp, input: &Array2<f64>) -> Array1<f64> {
    net.forward(input.view()).expect("critic input width").column(0).to_owned()
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    pub grad_q1: Vec<f64>,
    pub grad_q2: Vec<f64>,
    pub targets: Array1<f64>,
}

/// Mean squared soft Bellman error summed over both critics:
/// `y = r + γ·(min Q̄(s′, a′) − α·log π(a′|s′))`, `a′ = sigmoid(μ(s′) + σ(s′)·ξ′)`.
pub fn critic_loss(critics: &Critics, actor: &Actor, batch: &Batch, next_noise: &Array2<f64>, alpha: f64, gamma: f64) -> CriticLoss {
    let b = batch.len() as f64;
    let head = actor.head(batch.next_obs.view()).expect("obs width");
    let next = head.sample(next_noise.clone());
    let next_input = join(batch.next_obs.view(), next.actions.view());
    let tq1 = q_values(&critics.q1_target, &next_input);
    let tq2 = q_values(&critics.q2_target, &next_input);
    let soft_value = ndarray::Zip::from(&tq1).and(&tq2).and(&next.log_prob).map_collect(|&a, &c, &lp| a.min(c) - alpha * lp);
    let targets = &batch.rewards + &(soft_value * gamma);

    let input = join(batch.obs.view(), batch.actions.view());
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(2);
    for net in [&critics.q1, &critics.q2] {
        let (out, cache) = net.forward_cached(input.view()).expect("critic input width");
        let err = &out.column(0) - &targets;
        loss += err.mapv(|e| e * e).sum() / b;
        let d_out = (err * (2.0 / b)).insert_axis(Axis(1));
        let mut g = vec![0.0; net.n_params()];
        net.backward(&cache, d_out.view(), Some(&mut g));
        grads.push(g);
    }
    let grad_q2 = grads.pop().unwrap();
    let grad_q1 = grads.pop().unwrap();
    CriticLoss { loss, grad_q1, grad_q2, targets }
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub mean_log_prob: f64,
}

/// `J_π = mean(α·log π(a|s) − min Q(s, a))` with `a` reparameterised by `noise`.
pub fn actor_loss(actor: &Actor, critics: &Critics, obs: ArrayView2<'_, f64>, noise: &Array2<f64>, alpha: f64) -> ActorLoss {
    let b = obs.nrows() as f64;
    let n = actor.n_actions();
    let head = actor.head(obs).expect("obs width");
    let sample = head.sample(noise.clone());
    let input = join(obs, sample.actions.view());

    let (out1, cache1) = critics.q1.forward_cached(input.view()).expect("critic input width");
    let (out2, cache2) = critics.q2.forward_cached(input.view()).expect("critic input width");
    let use_first = ndarray::Zip::from(out1.column(0)).and(out2.column(0)).map_collect(|&a, &c| a <= c);
    let q_min = ndarray::Zip::from(out1.column(0)).and(out2.column(0)).map_collect(|&a, &c| a.min(c));
    let loss = (alpha * &sample.log_prob - &q_min).sum() / b;

    // gradient of −min Q with respect to the critic input, routed to the smaller twin
    let d1 = use_first.mapv(|f| if f { -1.0 / b } else { 0.0 }).insert_axis(Axis(1));
    let d2 = use_first.mapv(|f| if f { 0.0 } else { -1.0 / b }).insert_axis(Axis(1));
    let dx = critics.q1.backward(&cache1, d1.view(), None) + critics.q2.backward(&cache2, d2.view(), None);
    let d_actions = dx.slice(s![.., obs.ncols()..obs.ncols() + n]).to_owned();
    let d_log_prob = Array1::from_elem(obs.nrows(), alpha / b);

    let (d_mean, d_log_std) = head.sample_grads(&sample, &d_actions, &d_log_prob);
    let mut grads = vec![0.0; actor.net().n_params()];
    actor.backward(&head, &d_mean, &d_log_std, &mut grads);
    ActorLoss { loss, grads, mean_log_prob: sample.log_prob.mean().unwrap_or(0.0) }
}

/// Gradient of `J(log α) = −log α · mean(log π + H̄)` with respect to `log α`.
pub fn temperature_grad(mean_log_prob: f64, target_entropy: f64) -> f64 {
    -(mean_log_prob + target_entropy)
}

/// Importance-sampled estimate of `log ∫ exp(Q(a)) da`:
/// `logsumexp(Q_j − log q_j) − log(m)` over `m` proposal draws with densities `q_j`.
pub fn logsumexp_estimate(q: &[f64], log_proposal: &[f64]) -> f64 {
    let vals: Vec<f64> = q.iter().zip(log_proposal).map(|(a, b)| a - b).collect();
    logsumexp(&vals) - (vals.len() as f64).ln()
}

/// Log-density of the equal mixture of `Uniform[0, 1]^n` and the policy,
/// given the policy log-density at the same action.
pub fn log_mixture_density(log_pi: f64) -> f64 {
    let softplus = if log_pi > 0.0 { log_pi + (-log_pi).exp().ln_1p() } else { log_pi.exp().ln_1p() };
    softplus - std::f64::consts::LN_2
}

pub fn logsumexp(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Proposal draws for the conservative penalty, per batch state.
#[derive(Debug, Clone)]
pub struct CqlSamples {
    /// `(batch·m) × n` uniform actions on `[0, 1]^n`; row `b·m + j` belongs to state `b`.
    pub uniform: Array2<f64>,
    /// `(batch·m) × n` standard normal noise for the policy draws.
    pub policy_noise: Array2<f64>,
}

impl CqlSamples {
    pub fn draw<R: Rng + ?Sized>(batch: usize, per_state: usize, n_actions: usize, rng: &mut R) -> Self {
        let uniform = Array2::from_shape_simple_fn((batch * per_state, n_actions), || rng.sample::<f64, _>(Open01));
        let policy_noise = crate::rl::policy::standard_normal((batch * per_state, n_actions), rng);
        Self { uniform, policy_noise }
    }
}

#[derive(Debug, Clone)]
pub struct CqlTerm {
    /// Sum over both critics of `mean_s[logsumexp_a Q(s, a) − Q(s, a_data)]`.
    pub value: f64,
    pub grad_q1: Vec<f64>,
    pub grad_q2: Vec<f64>,
}

/// Conservative penalty: pushes Q down on actions proposed uniformly and by
/// the current policy, and up on the dataset's own actions.
///
/// All `2m` draws per state are weighted against the mixture density
/// `½·1 + ½·π(a|s)`, which keeps the importance weights bounded by `2·exp(Q)`.
pub fn cql_regularizer(critics: &Critics, actor: &Actor, batch: &Batch, samples: &CqlSamples) -> CqlTerm {
    let b = batch.len();
    let m = samples.uniform.nrows() / b;
    let od = batch.obs.ncols();
    let repeated_obs = Array2::from_shape_fn((b * m, od), |(r, c)| batch.obs[[r / m, c]]);

    let head = actor.head(repeated_obs.view()).expect("obs width");
    let policy = head.sample(samples.policy_noise.clone());
    let log_pi_uniform: Vec<f64> = (0..b * m)
        .map(|r| {
            let mean = head.mean.row(r);
            let log_std = head.log_std.row(r);
            let u = samples.uniform.row(r);
            log_prob_of_action(mean.as_slice().unwrap(), log_std.as_slice().unwrap(), u.as_slice().unwrap())
        })
        .collect();

    // per state: m uniform rows then m policy rows
    let mut input = Array2::zeros((b * 2 * m, od + actor.n_actions()));
    let mut log_q = vec![0.0; b * 2 * m];
    for st in 0..b {
        for j in 0..m {
            let src = st * m + j;
            let (ru, rp) = (st * 2 * m + j, st * 2 * m + m + j);
            input.slice_mut(s![ru, ..od]).assign(&batch.obs.row(st));
            input.slice_mut(s![ru, od..]).assign(&samples.uniform.row(src));
            input.slice_mut(s![rp, ..od]).assign(&batch.obs.row(st));
            input.slice_mut(s![rp, od..]).assign(&policy.actions.row(src));
            log_q[ru] = log_mixture_density(log_pi_uniform[src]);
            log_q[rp] = log_mixture_density(policy.log_prob[src]);
        }
    }
    let data_input = join(batch.obs.view(), batch.actions.view());

    let mut value = 0.0;
    let mut grads = Vec::with_capacity(2);
    for net in [&critics.q1, &critics.q2] {
        let mut g = vec![0.0; net.n_params()];
        let (q, cache) = net.forward_cached(input.view()).expect("critic input width");
        let mut d_q = Array2::zeros((b * 2 * m, 1));
        for st in 0..b {
            let rows = st * 2 * m..(st + 1) * 2 * m;
            let shifted: Vec<f64> = rows.clone().map(|r| q[[r, 0]] - log_q[r]).collect();
            let lse = logsumexp(&shifted);
            value += (lse - ((2 * m) as f64).ln()) / b as f64;
            for (k, r) in rows.enumerate() {
                d_q[[r, 0]] = (shifted[k] - lse).exp() / b as f64;
            }
        }
        net.backward(&cache, d_q.view(), Some(&mut g));

        let (q_data, data_cache) = net.forward_cached(data_input.view()).expect("critic input width");
        value -= q_data.column(0).sum() / b as f64;
        let d_data = Array2::from_elem((b, 1), -1.0 / b as f64);
        net.backward(&data_cache, d_data.view(), Some(&mut g));
        grads.push(g);
    }
    let grad_q2 = grads.pop().unwrap();
    let grad_q1 = grads.pop().unwrap();
    CqlTerm { value, grad_q1, grad_q2 }
}
