//! Shared-parameter deep Q-learning: a tanh projection to the embedding
//! width followed by a linear head over the composite action set, uniform
//! replay, and a periodically synchronized target network.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{
    init_linear, linear_on_tape, load_checkpoint, save_checkpoint, Adam, AdamConfig, NeuralError, Params, Tape,
    Tensor,
};
use crate::rng::{labels, stream};

pub mod toy;

pub const DEFAULT_ACTIONS: usize = 21;
pub const EMBED_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("observation has {got} values, network expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("action {action} outside 0..{count}")]
    BadAction { action: usize, count: usize },
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Action selections over which epsilon decays linearly.
    pub epsilon_decay_steps: u64,
    pub batch_size: usize,
    pub target_sync_every: u64,
    pub replay_capacity: usize,
    /// Transitions required before learning starts.
    pub learning_starts: usize,
    pub action_count: usize,
    pub embed_dim: usize,
    pub adam: AdamConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 20_000,
            batch_size: 64,
            target_sync_every: 500,
            replay_capacity: 50_000,
            learning_starts: 256,
            action_count: DEFAULT_ACTIONS,
            embed_dim: EMBED_DIM,
            adam: AdamConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: &str| Err(DqnError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_end) || !(self.epsilon_end..=1.0).contains(&self.epsilon_start) {
            return bad("need 0 <= epsilon_end <= epsilon_start <= 1");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.action_count == 0 || self.embed_dim == 0 {
            return bad("batch_size, replay_capacity, action_count and embed_dim must be positive");
        }
        if self.target_sync_every == 0 {
            return bad("target_sync_every must be positive");
        }
        Ok(())
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        let frac = if self.epsilon_decay_steps == 0 { 1.0 } else { (step as f64 / self.epsilon_decay_steps as f64).min(1.0) };
        self.epsilon_start * (1.0 - frac) + self.epsilon_end * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    /// Actions allowed in `next_obs`; the bootstrap max ranges over these.
    #[serde(default)]
    pub next_mask: Option<Vec<bool>>,
}

/// Fixed-capacity ring of transitions with uniform sampling without
/// replacement inside each batch.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Self {
        Self { capacity: capacity.max(1), items: Vec::new(), next: 0, rng }
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

    /// Indices of a batch of `min(n, len)` distinct transitions.
    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        let n = n.min(self.items.len());
        sample(&mut self.rng, self.items.len(), n).into_vec()
    }

    pub fn sample(&mut self, n: usize) -> Vec<Transition> {
        self.sample_indices(n).into_iter().map(|i| self.items[i].clone()).collect()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }
}

/// Online-network parameters: `proj` (input -> embed, tanh) and `head`
/// (embed -> actions).
pub fn init_q_network(rng: &mut ChaCha8Rng, input_dim: usize, config: &AgentConfig) -> Params {
    let mut p = Params::new();
    init_linear(&mut p, rng, "proj", input_dim, config.embed_dim, true);
    init_linear(&mut p, rng, "head", config.embed_dim, config.action_count, true);
    p
}

fn input_dim(params: &Params) -> Result<usize, DqnError> {
    Ok(params.get("proj.w")?.dims()?.1)
}

fn forward<'p>(tape: &mut Tape<'p>, rows: usize, cols: usize, data: Vec<f64>) -> Result<crate::neural::Var, DqnError> {
    let x = tape.input(Tensor::matrix(rows, cols, data)?)?;
    let a = linear_on_tape(tape, "proj", x)?;
    let a = tape.tanh(a)?;
    Ok(linear_on_tape(tape, "head", a)?)
}

/// Q values for a batch of observations, one row each.
pub fn q_values_batch(params: &Params, obs: &[&[f64]]) -> Result<Vec<Vec<f64>>, DqnError> {
    let dim = input_dim(params)?;
    let mut data = Vec::with_capacity(obs.len() * dim);
    for o in obs {
        if o.len() != dim {
            return Err(DqnError::ShapeMismatch { expected: dim, got: o.len() });
        }
        data.extend_from_slice(o);
    }
    if obs.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new(params);
    let q = forward(&mut tape, obs.len(), dim, data)?;
    let t = tape.value(q)?;
    Ok((0..obs.len()).map(|i| t.row(i).to_vec()).collect())
}

pub fn q_values(params: &Params, obs: &[f64]) -> Result<Vec<f64>, DqnError> {
    Ok(q_values_batch(params, &[obs])?.pop().expect("one row"))
}

/// Index of the largest permitted value; lowest index wins ties.
pub fn masked_argmax(q: &[f64], mask: Option<&[bool]>) -> usize {
    let mut best: Option<usize> = None;
    for (i, v) in q.iter().enumerate() {
        if mask.is_some_and(|m| !m.get(i).copied().unwrap_or(false)) {
            continue;
        }
        if best.is_none_or(|b| *v > q[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

/// Epsilon-greedy choice. Random picks are uniform over permitted actions.
pub fn select_action(q: &[f64], epsilon: f64, rng: &mut impl Rng, mask: Option<&[bool]>) -> usize {
    if rng.gen::<f64>() < epsilon {
        let allowed: Vec<usize> =
            (0..q.len()).filter(|i| mask.is_none_or(|m| m.get(*i).copied().unwrap_or(false))).collect();
        if allowed.is_empty() {
            return 0;
        }
        return allowed[rng.gen_range(0..allowed.len())];
    }
    masked_argmax(q, mask)
}

/// TD targets `r + γ · max_a' Q_target(s', a') · (1 − done)`.
pub fn td_targets(target: &Params, batch: &[Transition], gamma: f64) -> Result<Vec<f64>, DqnError> {
    let next: Vec<&[f64]> = batch.iter().map(|t| t.next_obs.as_slice()).collect();
    let q_next = q_values_batch(target, &next)?;
    Ok(batch
        .iter()
        .zip(q_next)
        .map(|(t, q)| {
            if t.done {
                t.reward
            } else {
                let best = masked_argmax(&q, t.next_mask.as_deref());
                t.reward + gamma * q[best]
            }
        })
        .collect())
}

/// One gradient step on the mean squared TD error; returns the loss.
pub fn train_step(
    params: &mut Params,
    target: &Params,
    batch: &[Transition],
    config: &AgentConfig,
    optimizer: &mut Adam,
) -> Result<f64, DqnError> {
    if batch.is_empty() {
        return Err(DqnError::EmptyBatch);
    }
    let dim = input_dim(params)?;
    let actions = params.get("head.w")?.dims()?.0;
    let y = td_targets(target, batch, config.gamma)?;
    let mut data = Vec::with_capacity(batch.len() * dim);
    let mut picked = Vec::with_capacity(batch.len());
    for t in batch {
        if t.obs.len() != dim {
            return Err(DqnError::ShapeMismatch { expected: dim, got: t.obs.len() });
        }
        if t.action >= actions {
            return Err(DqnError::BadAction { action: t.action, count: actions });
        }
        data.extend_from_slice(&t.obs);
        picked.push(t.action);
    }
    let (loss, grads) = {
        let mut tape = Tape::new(params);
        let q = forward(&mut tape, batch.len(), dim, data)?;
        let qa = tape.gather(q, &picked)?;
        let yv = tape.input(Tensor::matrix(batch.len(), 1, y)?)?;
        let l = tape.mse(qa, yv)?;
        (tape.value(l)?.data()[0], tape.backward(l)?)
    };
    optimizer.step(params, &grads)?;
    Ok(loss)
}

pub fn sync_target(params: &Params) -> Params {
    params.clone()
}

/// Learner state for all satellites: one online network, its target copy,
/// the optimizer and the shared replay buffer.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: AgentConfig,
    online: Params,
    target: Params,
    optimizer: Adam,
    replay: ReplayBuffer,
    act_steps: u64,
    learner_steps: u64,
}

impl DqnAgent {
    pub fn new(config: AgentConfig, input_dim: usize, seed: u64) -> Result<Self, DqnError> {
        config.validate()?;
        let mut init = stream(seed, labels::INIT, 1);
        let online = init_q_network(&mut init, input_dim, &config);
        let replay = ReplayBuffer::new(config.replay_capacity, stream(seed, labels::REPLAY, 0));
        let optimizer = Adam::new(config.adam);
        Ok(Self { target: online.clone(), online, optimizer, replay, config, act_steps: 0, learner_steps: 0 })
    }

    pub fn online(&self) -> &Params {
        &self.online
    }

    pub fn target(&self) -> &Params {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn learner_steps(&self) -> u64 {
        self.learner_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_at(self.act_steps)
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>, DqnError> {
        q_values(&self.online, obs)
    }

    /// Epsilon-greedy action; advances the exploration schedule.
    pub fn act(&mut self, obs: &[f64], mask: Option<&[bool]>, rng: &mut impl Rng) -> Result<usize, DqnError> {
        let q = self.q_values(obs)?;
        let a = select_action(&q, self.epsilon(), rng, mask);
        self.act_steps += 1;
        Ok(a)
    }

    /// Greedy action without exploration.
    pub fn greedy(&self, obs: &[f64], mask: Option<&[bool]>) -> Result<usize, DqnError> {
        Ok(masked_argmax(&self.q_values(obs)?, mask))
    }

    pub fn remember(&mut self, t: Transition) {
        self.replay.push(t);
    }

    /// Samples a batch and trains once if enough transitions are stored;
    /// syncs the target every `target_sync_every` learner steps.
    pub fn learn(&mut self) -> Result<Option<f64>, DqnError> {
        if self.replay.len() < self.config.learning_starts.max(1) {
            return Ok(None);
        }
        let batch = self.replay.sample(self.config.batch_size);
        let loss = train_step(&mut self.online, &self.target, &batch, &self.config, &mut self.optimizer)?;
        self.learner_steps += 1;
        if self.learner_steps.is_multiple_of(self.config.target_sync_every) {
            self.target = sync_target(&self.online);
        }
        Ok(Some(loss))
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<(), DqnError> {
        save_checkpoint(path, config_hash, &[("online", &self.online), ("target", &self.target)])?;
        Ok(())
    }

    /// Restores both networks; optimizer moments and replay are not stored.
    pub fn load(&mut self, path: &Path) -> Result<String, DqnError> {
        let mut ck = load_checkpoint(path)?;
        let take = |ck: &mut crate::neural::Checkpoint, set: &str| {
            ck.sets.remove(set).ok_or_else(|| NeuralError::Format(format!("missing set {set}")))
        };
        let online = take(&mut ck, "online")?;
        let target = take(&mut ck, "target")?;
        for (name, t) in self.online.iter() {
            if online.get(name)?.shape() != t.shape() {
                return Err(NeuralError::Format(format!("shape of {name} differs")).into());
            }
        }
        self.online = online;
        self.target = target;
        Ok(ck.config_hash)
    }
}
