//! Off-policy double-DQN training: replay, exploration schedule, TD targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, LearnError};
use crate::valuenet::{polyak_update, Adam, Checkpoint, QFunction, QNetwork, StateWindow};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub window: StateWindow,
    pub action: usize,
    pub reward: f64,
    pub next_window: StateWindow,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Steps per e-fold of the exploration decay.
    pub epsilon_decay: f64,
    pub warmup_steps: usize,
    pub tau_polyak: f64,
    pub capacity: usize,
    pub train_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 1e-3,
            batch_size: 64,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 20_000.0,
            warmup_steps: 2000,
            tau_polyak: 0.005,
            capacity: 100_000,
            train_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ConfigError::invalid("train.gamma", "must lie in (0, 1)"));
        }
        if !(self.lr >= 0.0) {
            return Err(ConfigError::invalid("train.lr", "must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::invalid("train.batch_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_end)
            || !(self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0)
        {
            return Err(ConfigError::invalid("train.epsilon_end", "need 0 ≤ ε_end ≤ ε_start ≤ 1"));
        }
        if !(self.epsilon_decay > 0.0) {
            return Err(ConfigError::invalid("train.epsilon_decay", "must be positive"));
        }
        if !(self.tau_polyak > 0.0 && self.tau_polyak <= 1.0) {
            return Err(ConfigError::invalid("train.tau_polyak", "must lie in (0, 1]"));
        }
        if self.capacity < self.batch_size {
            return Err(ConfigError::invalid("train.capacity", "must hold at least one batch"));
        }
        if self.train_every == 0 {
            return Err(ConfigError::invalid("train.train_every", "must be positive"));
        }
        Ok(())
    }
}

/// Exploration rate after `step` environment steps.
pub fn epsilon(step: u64, cfg: &TrainConfig) -> f64 {
    cfg.epsilon_end + (cfg.epsilon_start - cfg.epsilon_end) * (-(step as f64) / cfg.epsilon_decay).exp()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fixed-capacity FIFO with uniform sampling from its own RNG stream.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform draw with replacement.
    pub fn sample_indices(&mut self, batch: usize) -> Result<Vec<usize>, LearnError> {
        if self.items.len() < batch {
            return Err(LearnError::InsufficientSamples { len: self.items.len(), batch });
        }
        let n = self.items.len();
        Ok((0..batch).map(|_| self.rng.gen_range(0..n)).collect())
    }

    pub fn sample(&mut self, batch: usize) -> Result<Vec<&Transition>, LearnError> {
        let idx = self.sample_indices(batch)?;
        Ok(idx.into_iter().map(|i| &self.items[i]).collect())
    }
}

/// `r` if terminal, else `r + γ·Q_target(s', argmax_a Q_online(s', a))`.
pub fn ddqn_target<F: QFunction>(
    reward: f64,
    next: &StateWindow,
    done: bool,
    gamma: f64,
    online: &F,
    target: &F,
) -> f64 {
    if done {
        return reward;
    }
    let a = argmax(&online.q_values(next));
    reward + gamma * target.q_values(next)[a]
}

/// Optional adjustment applied to every TD target before the loss.
pub type TargetHook = fn(f64, &Transition) -> f64;

/// Mean squared TD residual and its gradient with respect to the online
/// parameters. Targets are treated as constants.
pub fn td_loss(
    batch: &[&Transition],
    online: &QNetwork,
    target: &QNetwork,
    gamma: f64,
    hook: Option<TargetHook>,
) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; online.param_count()];
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for t in batch {
        let mut y = ddqn_target(t.reward, &t.next_window, t.done, gamma, online, target);
        if let Some(h) = hook {
            y = h(y, t);
        }
        let (q, tape) = online.forward_tape(&t.window);
        let residual = q[t.action] - y;
        loss += residual * residual / n;
        let mut dq = vec![0.0; q.len()];
        dq[t.action] = 2.0 * residual / n;
        online.backward(&tape, &dq, &mut grads);
    }
    (loss, grads)
}

/// Online and target critics with their optimizer.
#[derive(Debug, Clone)]
pub struct Learner {
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: Adam,
    pub config: TrainConfig,
    pub target_hook: Option<TargetHook>,
    updates: u64,
}

impl Learner {
    pub fn new(online: QNetwork, config: TrainConfig) -> Self {
        let target = online.clone();
        let optimizer = Adam::new(online.param_count(), config.lr);
        Self { online, target, optimizer, config, target_hook: None, updates: 0 }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Sample, compute targets and loss, take one Adam step, then Polyak.
    pub fn train_step(&mut self, buffer: &mut ReplayBuffer) -> Result<f64, LearnError> {
        let batch = buffer.sample(self.config.batch_size)?;
        let (loss, grads) = td_loss(&batch, &self.online, &self.target, self.config.gamma, self.target_hook);
        self.optimizer.update(self.online.params_mut(), &grads);
        polyak_update(self.target.params_mut(), self.online.params(), self.config.tau_polyak);
        self.updates += 1;
        Ok(loss)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.online.clone(), self.target.clone(), self.optimizer.clone())
    }

    pub fn restore(&mut self, ck: Checkpoint) -> Result<(), LearnError> {
        if !ck.online.store().same_layout(self.online.store()) {
            return Err(LearnError::LayoutMismatch);
        }
        self.online = ck.online;
        self.target = ck.target;
        self.optimizer = ck.optimizer;
        Ok(())
    }
}
