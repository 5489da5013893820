use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::actions::NUM_ACTIONS;
use crate::ela::{ElaConfig, ElaEncoder, ElaInput};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Graph, Mlp, ParameterSet, Tensor, Var};
use crate::rng::{self, Rng, Stream};

/// Parameter-name prefix of the encoder inside a policy.
pub const ELA_PREFIX: &str = "ela";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ela_learning_rate: f64,
    pub replay_capacity: usize,
    pub warmup: usize,
    /// Environment transitions per gradient update once warmed up.
    pub steps_per_update: usize,
    pub hidden: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 1e-4,
            batch_size: 64,
            learning_rate: 1e-4,
            ela_learning_rate: 1e-5,
            replay_capacity: 50_000,
            warmup: 1_000,
            steps_per_update: 1,
            hidden: 64,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1]", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("soft-update rate {} outside (0, 1)", self.tau)));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size || self.steps_per_update == 0 {
            return Err(Error::Config(
                "batch, replay capacity and update cadence must be positive with capacity >= batch".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.ela_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Linear exploration decay over the leading fraction of training episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.5,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize, total_episodes: usize) -> f64 {
        let horizon = self.decay_fraction * total_episodes as f64;
        if horizon <= 0.0 || episode as f64 >= horizon {
            return self.end;
        }
        self.start + (self.end - self.start) * episode as f64 / horizon
    }
}

/// Encoder plus Q-value head sharing one parameter set.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    params: ParameterSet,
    encoder: ElaEncoder,
    head: Mlp,
    ela_config: ElaConfig,
    hidden: usize,
}

/// Checkpoint metadata for a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub ela: ElaConfig,
    pub hidden: usize,
    pub actions: usize,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl PolicyNet {
    pub fn new(ela_config: ElaConfig, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let mut params = ParameterSet::new();
        let encoder = ElaEncoder::new(&mut params, ELA_PREFIX, ela_config, rng)?;
        let head = Mlp::new(
            &mut params,
            "q",
            &[ela_config.state_len(), hidden, hidden, NUM_ACTIONS],
            rng,
        );
        Ok(Self {
            params,
            encoder,
            head,
            ela_config,
            hidden,
        })
    }

    pub fn seeded(ela_config: ElaConfig, hidden: usize, seed: u64) -> Result<Self> {
        Self::new(ela_config, hidden, &mut rng::stream(seed, Stream::Init, 0))
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn encoder(&self) -> &ElaEncoder {
        &self.encoder
    }

    /// Emit the `1 × NUM_ACTIONS` Q node.
    pub fn forward(&self, g: &mut Graph, input: &ElaInput) -> Result<Var> {
        let s = self.encoder.forward(g, &self.params, input)?;
        self.head.forward(g, &self.params, s)
    }

    pub fn q_values(&self, input: &ElaInput) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let q = self.forward(&mut g, input)?;
        let v = g.value(q).data().to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Q-values"));
        }
        Ok(v)
    }

    /// Optimizer with the encoder on its own learning rate.
    pub fn optimizer(&self, config: &DqnConfig) -> Adam {
        let mut opt = Adam::new(&self.params, config.learning_rate);
        opt.set_lr_for_prefix(&self.params, &format!("{ELA_PREFIX}."), config.ela_learning_rate);
        opt
    }

    pub fn meta(&self, extra: serde_json::Value) -> PolicyMeta {
        PolicyMeta {
            ela: self.ela_config,
            hidden: self.hidden,
            actions: NUM_ACTIONS,
            extra,
        }
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::to_string(&self.meta(extra))?;
        nn::save_checkpoint(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, PolicyMeta)> {
        let (loaded, meta) = nn::load_checkpoint(path)?;
        let meta: PolicyMeta =
            serde_json::from_str(&meta).map_err(|e| Error::Checkpoint(format!("bad policy metadata: {e}")))?;
        if meta.actions != NUM_ACTIONS {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} actions, expected {NUM_ACTIONS}",
                meta.actions
            )));
        }
        let mut net = Self::seeded(meta.ela, meta.hidden, 0)?;
        nn::restore_into(&mut net.params, &loaded)?;
        Ok((net, meta))
    }
}

/// ε-greedy choice; greedy ties go to the lowest index.
pub fn act(q: &[f64], epsilon: f64, rng: &mut Rng) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return rng.random_range(0..q.len());
    }
    argmax(q)
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// One step of experience. States are stored as raw encoder inputs so the
/// encoder is trained through the TD loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<ElaInput>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Arc<ElaInput>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
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

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.reward.is_finite() {
            return Err(Error::NonFinite("transition reward"));
        }
        if t.action >= NUM_ACTIONS {
            return Err(Error::InvalidArgument(format!("action {} out of range", t.action)));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Slot indices drawn uniformly with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.items.len() < batch {
            return Err(Error::BufferUnderfull {
                have: self.items.len(),
                need: batch,
            });
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// Decoupled target `r + γ (1 - done) Q_target(s', argmax_a Q_online(s', a))`.
pub fn double_dqn_target(reward: f64, gamma: f64, terminal: bool, q_online_next: &[f64], q_target_next: &[f64]) -> f64 {
    if terminal {
        return reward;
    }
    reward + gamma * q_target_next[argmax(q_online_next)]
}

/// One Double-DQN gradient step on `batch`; returns the mean squared TD error.
pub fn double_dqn_update(
    online: &mut PolicyNet,
    target: &PolicyNet,
    opt: &mut Adam,
    batch: &[&Transition],
    gamma: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("update batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    online.params.zero_grad();
    let mut total = 0.0;
    let mut g = Graph::new();
    for t in batch {
        let y = if t.terminal {
            t.reward
        } else {
            let qo = online.q_values(&t.next_state)?;
            let qt = target.q_values(&t.next_state)?;
            double_dqn_target(t.reward, gamma, false, &qo, &qt)
        };
        g.reset();
        let q = online.forward(&mut g, &t.state)?;
        let chosen = g.select_cols(q, vec![t.action])?;
        let yv = g.constant(Tensor::scalar(y));
        let err = g.mse(chosen, yv)?;
        let loss = g.scale(err, scale);
        total += g.value(err).item();
        g.backward(loss, &mut online.params)?;
    }
    opt.step(&mut online.params)?;
    Ok(total * scale)
}

/// `θ_target ← τ θ_online + (1 - τ) θ_target`.
pub fn soft_update(target: &mut PolicyNet, online: &PolicyNet, tau: f64) -> Result<()> {
    target.params.blend_from(&online.params, tau)
}
