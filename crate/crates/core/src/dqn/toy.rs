//! Small deterministic MDPs with one-hot states, used to check that the
//! learner reaches the tabular fixed point.

use super::{sync_target, init_q_network, q_values, train_step, AgentConfig, DqnError, Transition};
use crate::neural::{Adam, AdamConfig};
use crate::rng::{labels, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    /// `next[s][a]` successor state.
    pub next: Vec<Vec<usize>>,
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn states(&self) -> usize {
        self.next.len()
    }

    pub fn actions(&self) -> usize {
        self.next.first().map_or(0, Vec::len)
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.states()];
        v[s] = 1.0;
        v
    }

    /// Every (state, action) pair once; none terminate.
    pub fn transitions(&self) -> Vec<Transition> {
        let mut out = Vec::new();
        for s in 0..self.states() {
            for a in 0..self.actions() {
                out.push(Transition {
                    obs: self.one_hot(s),
                    action: a,
                    reward: self.reward[s][a],
                    next_obs: self.one_hot(self.next[s][a]),
                    done: false,
                    next_mask: None,
                });
            }
        }
        out
    }
}

/// Two states; action 0 stays, action 1 switches; arriving in state 1 pays 1.
pub fn two_state() -> TabularMdp {
    TabularMdp { next: vec![vec![0, 1], vec![1, 0]], reward: vec![vec![0.0, 1.0], vec![1.0, 0.0]], gamma: 0.9 }
}

/// Four-state chain; action 0 steps left, action 1 steps right, both clamped
/// at the ends. Entering or staying in the last state pays 1, stepping left
/// out of the first state costs 0.1.
pub fn four_state_chain() -> TabularMdp {
    let n: usize = 4;
    let mut next = Vec::new();
    let mut reward = Vec::new();
    for s in 0..n {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        next.push(vec![left, right]);
        let pay = |t: usize| if t == n - 1 { 1.0 } else { 0.0 };
        reward.push(vec![pay(left) - if s == 0 { 0.1 } else { 0.0 }, pay(right)]);
    }
    TabularMdp { next, reward, gamma: 0.9 }
}

#[derive(Debug, Clone)]
pub struct ToyFit {
    /// Learned `q[s][a]`.
    pub q: Vec<Vec<f64>>,
    pub outer_iterations: usize,
    pub train_steps: usize,
    pub final_loss: f64,
}

/// Fitted Q iteration through [`train_step`]: the full transition set is the
/// batch and the target network is synced after every inner fit. The Adam
/// step size decays geometrically from `1e-2` to `1e-5` across the syncs so
/// the final fits settle instead of jittering around the fixed point.
pub fn fit_tabular(mdp: &TabularMdp, seed: u64) -> Result<ToyFit, DqnError> {
    const SYNCS: usize = 300;
    const INNER: usize = 300;
    let config = AgentConfig {
        gamma: mdp.gamma,
        action_count: mdp.actions(),
        embed_dim: 16,
        batch_size: mdp.states() * mdp.actions(),
        adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
        ..AgentConfig::default()
    };
    config.validate()?;
    let batch = mdp.transitions();
    let mut online = init_q_network(&mut stream(seed, labels::INIT, 0), mdp.states(), &config);
    let mut opt = Adam::new(config.adam);
    let mut steps = 0;
    let mut loss = f64::INFINITY;
    for k in 0..SYNCS {
        opt.config.lr = 1e-2 * 1e-3f64.powf(k as f64 / (SYNCS - 1) as f64);
        let target = sync_target(&online);
        for _ in 0..INNER {
            loss = train_step(&mut online, &target, &batch, &config, &mut opt)?;
            steps += 1;
        }
    }
    let q = (0..mdp.states()).map(|s| q_values(&online, &mdp.one_hot(s))).collect::<Result<_, _>>()?;
    Ok(ToyFit { q, outer_iterations: SYNCS, train_steps: steps, final_loss: loss })
}
