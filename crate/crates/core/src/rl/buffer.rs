use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Flat `(s, a, r, s′)` record as consumed by the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
}

/// Anything transitions can be sampled from.
pub trait TransitionSource {
    fn len(&self) -> usize;
    fn get(&self, idx: usize) -> &Transition;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Uniform sample with replacement.
    fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Batch
    where
        Self: Sized,
    {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len())).collect();
        Batch::from_transitions(idx.iter().map(|&i| self.get(i)))
    }
}

impl TransitionSource for [Transition] {
    fn len(&self) -> usize {
        <[Transition]>::len(self)
    }
    fn get(&self, idx: usize) -> &Transition {
        &self[idx]
    }
}

impl TransitionSource for Vec<Transition> {
    fn len(&self) -> usize {
        <[Transition]>::len(self)
    }
    fn get(&self, idx: usize) -> &Transition {
        &self[idx]
    }
}

/// Column-stacked minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
}

impl Batch {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Self {
        let items: Vec<&Transition> = items.into_iter().collect();
        assert!(!items.is_empty(), "empty batch");
        let (od, ad) = (items[0].obs.len(), items[0].action.len());
        let b = items.len();
        let mut obs = Array2::zeros((b, od));
        let mut actions = Array2::zeros((b, ad));
        let mut next_obs = Array2::zeros((b, od));
        let mut rewards = Array1::zeros(b);
        for (i, t) in items.iter().enumerate() {
            obs.row_mut(i).assign(&Array1::from(t.obs.clone()));
            actions.row_mut(i).assign(&Array1::from(t.action.clone()));
            next_obs.row_mut(i).assign(&Array1::from(t.next_obs.clone()));
            rewards[i] = t.reward;
        }
        Self { obs, actions, rewards, next_obs }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity ring buffer; the oldest transitions are overwritten first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    inserted: u64,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 1_000_000;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, items: Vec::new(), inserted: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.items[slot] = t;
        }
        self.inserted += 1;
    }

    /// Contents from oldest to newest.
    pub fn iter_chronological(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { (self.inserted % self.capacity as u64) as usize };
        self.items[split..].iter().chain(self.items[..split].iter())
    }
}

impl TransitionSource for ReplayBuffer {
    fn len(&self) -> usize {
        self.items.len()
    }
    fn get(&self, idx: usize) -> &Transition {
        &self.items[idx]
    }
}
