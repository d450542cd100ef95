//! Gaussian policy squashed onto `[0, 1]` with a sigmoid.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rl::mlp::{Mlp, MlpCache};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Pre-squash values are clipped here so actions stay strictly inside (0, 1).
pub const PRE_SQUASH_LIMIT: f64 = 30.0;
pub const HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    net: Mlp,
    n_actions: usize,
}

/// Distribution parameters for a batch of observations.
#[derive(Debug, Clone)]
pub struct PolicyHead {
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    /// True where the raw log-std was clipped (no gradient flows there).
    clipped: Array2<bool>,
    cache: MlpCache,
}

/// Reparameterised sample `a = sigmoid(μ + σ·ξ)`.
#[derive(Debug, Clone)]
pub struct SquashedSample {
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
    pub noise: Array2<f64>,
    pre_clipped: Array2<bool>,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, n_actions: usize, rng: &mut R) -> Self {
        Self { net: Mlp::new(&[obs_dim, HIDDEN, HIDDEN, 2 * n_actions], rng), n_actions }
    }

    pub fn from_net(net: Mlp) -> Self {
        let n_actions = net.output_dim() / 2;
        Self { net, n_actions }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn head(&self, obs: ArrayView2<'_, f64>) -> Result<PolicyHead> {
        let (out, cache) = self.net.forward_cached(obs)?;
        let n = self.n_actions;
        let mean = out.slice(s![.., ..n]).to_owned();
        let raw = out.slice(s![.., n..]);
        let clipped = raw.mapv(|v| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok(PolicyHead { mean, log_std, clipped, cache })
    }

    /// Backpropagates gradients w.r.t. mean and (clamped) log-std into `grads`.
    pub fn backward(&self, head: &PolicyHead, d_mean: &Array2<f64>, d_log_std: &Array2<f64>, grads: &mut [f64]) {
        let n = self.n_actions;
        let mut d_out = Array2::zeros((d_mean.nrows(), 2 * n));
        d_out.slice_mut(s![.., ..n]).assign(d_mean);
        let mut d_ls = d_log_std.clone();
        Zip::from(&mut d_ls).and(&head.clipped).for_each(|d, &c| {
            if c {
                *d = 0.0;
            }
        });
        d_out.slice_mut(s![.., n..]).assign(&d_ls);
        self.net.backward(&head.cache, d_out.view(), Some(grads));
    }

    /// Single-observation policy query: the action and, in stochastic mode, its
    /// log-density.
    pub fn policy_sample<R: Rng + ?Sized>(&self, obs: &[f64], mode: SampleMode, rng: &mut R) -> Result<(Vec<f64>, Option<f64>)> {
        let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|_| crate::Error::ShapeMismatch {
            expected: self.obs_dim(),
            got: obs.len(),
        })?;
        let head = self.head(x)?;
        match mode {
            SampleMode::Deterministic => Ok((head.mean.row(0).mapv(sigmoid).to_vec(), None)),
            SampleMode::Stochastic => {
                let noise = standard_normal((1, self.n_actions), rng);
                let sample = head.sample(noise);
                Ok((sample.actions.row(0).to_vec(), Some(sample.log_prob[0])))
            }
        }
    }

    /// Deterministic action `sigmoid(μ)` for a single observation.
    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward_one(obs)?;
        Ok(out[..self.n_actions].iter().map(|&m| sigmoid(m)).collect())
    }
}

impl PolicyHead {
    pub fn sample(&self, noise: Array2<f64>) -> SquashedSample {
        let std = self.log_std.mapv(f64::exp);
        let raw_pre = &self.mean + &(&std * &noise);
        let pre_clipped = raw_pre.mapv(|u| u.abs() > PRE_SQUASH_LIMIT);
        let pre = raw_pre.mapv(|u| u.clamp(-PRE_SQUASH_LIMIT, PRE_SQUASH_LIMIT));
        let actions = pre.mapv(sigmoid);
        let gauss = Zip::from(&noise).and(&self.log_std).map_collect(|&xi, &ls| -0.5 * xi * xi - ls - 0.5 * (2.0 * PI).ln());
        let jac = pre.mapv(log_sigmoid_jacobian);
        let log_prob = (gauss - jac).sum_axis(Axis(1));
        SquashedSample { actions, log_prob, noise, pre_clipped }
    }

    /// Chain rule from `(dL/da, dL/dlogπ)` to `(dL/dμ, dL/dlogσ)`.
    pub fn sample_grads(&self, sample: &SquashedSample, d_actions: &Array2<f64>, d_log_prob: &Array1<f64>) -> (Array2<f64>, Array2<f64>) {
        let shape = self.mean.raw_dim();
        let mut d_mean = Array2::zeros(shape);
        let mut d_log_std = Array2::zeros(self.mean.raw_dim());
        for ((r, c), dm) in d_mean.indexed_iter_mut() {
            let a = sample.actions[[r, c]];
            let sigma_xi = self.log_std[[r, c]].exp() * sample.noise[[r, c]];
            let dlp = d_log_prob[r];
            // ∂logπ/∂u = 2a − 1 from the sigmoid change of variables
            let mut du = dlp * (2.0 * a - 1.0);
            du += d_actions[[r, c]] * a * (1.0 - a);
            if sample.pre_clipped[[r, c]] {
                du = 0.0;
            }
            *dm = du;
            d_log_std[[r, c]] = du * sigma_xi - dlp;
        }
        (d_mean, d_log_std)
    }
}

/// `log(d sigmoid(u)/du) = log(a(1 − a))`, computed without cancellation.
pub fn log_sigmoid_jacobian(u: f64) -> f64 {
    -u.abs() - 2.0 * (-u.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(a: f64) -> f64 {
    (a / (1.0 - a)).ln()
}

/// Log-density of action `a` under `sigmoid(N(μ, σ²))`, per dimension summed.
pub fn log_prob_of_action(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let u = logit(a);
            let xi = (u - m) / ls.exp();
            -0.5 * xi * xi - ls - 0.5 * (2.0 * PI).ln() - log_sigmoid_jacobian(u)
        })
        .sum()
}

pub fn standard_normal<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}
