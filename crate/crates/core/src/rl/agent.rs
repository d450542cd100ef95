use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rl::adam::Adam;
use crate::rl::buffer::TransitionSource;
use crate::rl::losses::{actor_loss, critic_loss, cql_regularizer, temperature_grad, Critics, CqlSamples};
use crate::rl::policy::{standard_normal, Actor, SampleMode};

/// Learner and training-schedule settings, read from `train.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub polyak: f64,
    pub init_alpha: f64,
    /// `None` means `−n_actions`.
    pub target_entropy: Option<f64>,
    pub cql_weight: f64,
    pub cql_num_samples: usize,
    pub grad_steps_per_episode: usize,
    /// Offline gradient steps for fine-tuning.
    pub finetune_steps: usize,
    pub seed: u64,
    pub episode_steps: usize,
    pub dt: f64,
    pub beta: f64,
    pub max_episodes: usize,
    pub test_every: usize,
    /// Test episodes averaged per performance test.
    pub test_episodes: usize,
    /// Plateau rule: stop when the best test return improved by less than this
    /// fraction over the last `plateau_window` tests.
    pub plateau_tolerance: f64,
    pub plateau_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 3e-4,
            batch_size: 256,
            polyak: 0.005,
            init_alpha: 1.0,
            target_entropy: None,
            cql_weight: 0.0,
            cql_num_samples: 10,
            grad_steps_per_episode: 200,
            finetune_steps: 6_000,
            seed: 0,
            episode_steps: 100,
            dt: 0.05,
            beta: 1.0,
            max_episodes: 200,
            test_every: 5,
            test_episodes: 1,
            plateau_tolerance: 0.02,
            plateau_window: 10,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let tc: Self = serde_json::from_str(text)?;
        tc.validate()?;
        Ok(tc)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("polyak", self.polyak),
            ("init_alpha", self.init_alpha),
            ("dt", self.dt),
            ("batch_size", self.batch_size as f64),
            ("cql_num_samples", self.cql_num_samples as f64),
            ("episode_steps", self.episode_steps as f64),
            ("test_every", self.test_every as f64),
            ("test_episodes", self.test_episodes as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositiveParameter { name });
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter { name: "gamma", reason: "must lie in [0, 1)".into() });
        }
        if self.polyak > 1.0 {
            return Err(Error::InvalidParameter { name: "polyak", reason: "must be <= 1".into() });
        }
        for (name, v) in [("cql_weight", self.cql_weight), ("beta", self.beta), ("plateau_tolerance", self.plateau_tolerance)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, reason: "must be >= 0".into() });
            }
        }
        if self.max_episodes == 0 {
            return Err(Error::InvalidArgument("max_episodes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean losses over one `sac_update` call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub cql_term: f64,
    pub alpha: f64,
}

/// Actor, twin critics, temperature and their optimisers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub config: TrainConfig,
    pub actor: Actor,
    pub critics: Critics,
    pub log_alpha: f64,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(obs_dim: usize, n_actions: usize, config: TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let actor = Actor::new(obs_dim, n_actions, &mut rng);
        let critics = Critics::new(obs_dim, n_actions, &mut rng);
        Self::from_parts(actor, critics, config, rng)
    }

    fn from_parts(actor: Actor, critics: Critics, config: TrainConfig, rng: ChaCha8Rng) -> Self {
        let lr = config.lr;
        Self {
            actor_opt: Adam::new(actor.net().n_params(), lr),
            q1_opt: Adam::new(critics.q1.n_params(), lr),
            q2_opt: Adam::new(critics.q2.n_params(), lr),
            alpha_opt: Adam::new(1, lr),
            log_alpha: config.init_alpha.ln(),
            config,
            actor,
            critics,
            rng,
        }
    }

    /// Keeps the networks and the temperature; optimiser state starts fresh
    /// under the new configuration.
    pub fn with_config(&self, config: TrainConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut agent = Self::from_parts(self.actor.clone(), self.critics.clone(), config, rng);
        agent.log_alpha = self.log_alpha;
        agent
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn n_actions(&self) -> usize {
        self.actor.n_actions()
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.obs_dim()
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.n_actions() as f64))
    }

    /// Action for one observation, drawing exploration noise from the agent's
    /// own generator in stochastic mode.
    pub fn act(&mut self, obs: &[f64], mode: SampleMode) -> Result<Vec<f64>> {
        Ok(self.actor.policy_sample(obs, mode, &mut self.rng)?.0)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Runs `grad_steps_per_episode` updates sampled from `data`.
    pub fn sac_update<S: TransitionSource>(&mut self, data: &S) -> Result<UpdateStats> {
        self.update_steps(data, self.config.grad_steps_per_episode)
    }

    /// Runs `steps` gradient updates: critics (with the conservative penalty
    /// when `cql_weight > 0`), actor, temperature, then the target average.
    pub fn update_steps<S: TransitionSource>(&mut self, data: &S, steps: usize) -> Result<UpdateStats> {
        let batch_size = self.config.batch_size;
        if data.len() < batch_size {
            return Err(Error::InsufficientData { needed: batch_size, available: data.len() });
        }
        let n = self.n_actions();
        let mut stats = UpdateStats::default();
        for _ in 0..steps {
            let batch = data.sample(batch_size, &mut self.rng);
            let alpha = self.alpha();

            let next_noise = standard_normal((batch_size, n), &mut self.rng);
            let cl = critic_loss(&self.critics, &self.actor, &batch, &next_noise, alpha, self.config.gamma);
            let (mut g1, mut g2) = (cl.grad_q1, cl.grad_q2);
            if self.config.cql_weight > 0.0 {
                let samples = CqlSamples::draw(batch_size, self.config.cql_num_samples, n, &mut self.rng);
                let cql = cql_regularizer(&self.critics, &self.actor, &batch, &samples);
                let w = self.config.cql_weight;
                for (g, c) in g1.iter_mut().zip(&cql.grad_q1).chain(g2.iter_mut().zip(&cql.grad_q2)) {
                    *g = 0.5 * *g + w * c;
                }
                stats.cql_term += cql.value;
            }
            self.q1_opt.step(self.critics.q1.params_mut(), &g1);
            self.q2_opt.step(self.critics.q2.params_mut(), &g2);

            let noise = standard_normal((batch_size, n), &mut self.rng);
            let al = actor_loss(&self.actor, &self.critics, batch.obs.view(), &noise, alpha);
            self.actor_opt.step(self.actor.net_mut().params_mut(), &al.grads);

            let mut log_alpha = [self.log_alpha];
            self.alpha_opt.step(&mut log_alpha, &[temperature_grad(al.mean_log_prob, self.target_entropy())]);
            self.log_alpha = log_alpha[0];

            self.critics.polyak_update(self.config.polyak);
            stats.critic_loss += cl.loss;
            stats.actor_loss += al.loss;
        }
        let k = steps.max(1) as f64;
        stats.critic_loss /= k;
        stats.actor_loss /= k;
        stats.cql_term /= k;
        stats.alpha = self.alpha();
        Ok(stats)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("agent serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::buffer::{ReplayBuffer, Transition};
    use ndarray::Array2;
    use rand::Rng;

    fn bandit_config(seed: u64) -> TrainConfig {
        TrainConfig { gamma: 0.0, lr: 3e-3, batch_size: 64, grad_steps_per_episode: 1, seed, ..Default::default() }
    }

    /// One-step bandit with reward −(a − 0.7)², constant observation.
    fn train_bandit(seed: u64, steps: usize) -> Agent {
        let mut agent = Agent::new(1, 1, bandit_config(seed));
        let mut buf = ReplayBuffer::new(10_000);
        for step in 0..steps {
            let a = agent.act(&[1.0], SampleMode::Stochastic).unwrap()[0];
            buf.push(Transition { obs: vec![1.0], action: vec![a], reward: -(a - 0.7).powi(2), next_obs: vec![1.0] });
            if step >= 64 {
                agent.sac_update(&buf).unwrap();
            }
        }
        agent
    }

    #[test]
    fn bandit_converges_to_optimum() {
        let agent = train_bandit(11, 2000);
        let a = agent.actor.mean_action(&[1.0]).unwrap()[0];
        assert!((a - 0.7).abs() < 0.05, "deterministic action {a}");
    }

    #[test]
    fn insufficient_data_reported() {
        let mut agent = Agent::new(1, 1, bandit_config(0));
        let data = vec![Transition { obs: vec![0.0], action: vec![0.5], reward: 0.0, next_obs: vec![0.0] }; 10];
        assert!(matches!(agent.sac_update(&data), Err(Error::InsufficientData { needed: 64, available: 10 })));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let a = train_bandit(3, 150);
        let b = train_bandit(3, 150);
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_stable() {
        let agent = train_bandit(5, 100);
        let text = agent.to_json();
        let back = Agent::from_json(&text).unwrap();
        assert_eq!(back, agent);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn resumed_checkpoint_continues_identically() {
        let mut agent = train_bandit(6, 100);
        let mut copy = Agent::from_json(&agent.to_json()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<Transition> = (0..100)
            .map(|_| {
                let a: f64 = rng.random();
                Transition { obs: vec![1.0], action: vec![a], reward: -(a - 0.7).powi(2), next_obs: vec![1.0] }
            })
            .collect();
        agent.update_steps(&data, 5).unwrap();
        copy.update_steps(&data, 5).unwrap();
        assert_eq!(agent, copy);
    }

    #[test]
    fn train_config_rejects_bad_values() {
        assert!(TrainConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { max_episodes: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::from_json(r#"{"learning_rate": 0.1}"#).is_err());
        let tc = TrainConfig::from_json(r#"{"seed": 9}"#).unwrap();
        assert_eq!(tc.seed, 9);
        assert_eq!(tc.batch_size, 256);
    }

    #[test]
    fn cql_training_is_conservative() {
        // logged actions cluster around 0.3 in a 2-D action space
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<Transition> = (0..500)
            .map(|_| {
                let obs = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let action = vec![0.3 + 0.05 * rng.random::<f64>(), 0.3 + 0.05 * rng.random::<f64>()];
                let next_obs = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                Transition { obs, action, reward: 1.0, next_obs }
            })
            .collect();
        let tc = TrainConfig { cql_weight: 5.0, batch_size: 64, lr: 1e-3, gamma: 0.9, seed: 2, ..Default::default() };
        let mut agent = Agent::new(2, 2, tc);
        agent.update_steps(&data, 600).unwrap();

        let obs = Array2::from_shape_fn((data.len(), 2), |(r, c)| data[r].obs[c]);
        let acts = Array2::from_shape_fn((data.len(), 2), |(r, c)| data[r].action[c]);
        let uni = Array2::from_shape_fn((data.len(), 2), |_| rng.random::<f64>());
        let mean_q = |a: &Array2<f64>| {
            let x = crate::rl::losses::join(obs.view(), a.view());
            agent.critics.q1.forward(x.view()).unwrap().mean().unwrap()
        };
        let (q_data, q_rand) = (mean_q(&acts), mean_q(&uni));
        assert!(q_data >= q_rand, "data {q_data} vs random {q_rand}");
    }
}
