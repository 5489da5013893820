//! Parallel rollouts with a centralized Double-DQN trainer.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::dqn::{act, double_dqn_update, soft_update, DqnConfig, EpsilonSchedule, PolicyNet, ReplayBuffer, Transition};
use super::actions::NUM_ACTIONS;
use crate::ela::{ElaConfig, ElaInput};
use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};

/// Chooses a region action from the encoder input of the current archive.
pub trait ActionPolicy {
    fn choose(&mut self, input: &ElaInput) -> Result<usize>;
}

/// Uniformly random actions.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: rng::stream(seed, Stream::Policy, 0),
        }
    }
}

impl ActionPolicy for RandomPolicy {
    fn choose(&mut self, _input: &ElaInput) -> Result<usize> {
        use rand::Rng as _;
        Ok(self.rng.random_range(0..NUM_ACTIONS))
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub usize);

impl ActionPolicy for FixedPolicy {
    fn choose(&mut self, _input: &ElaInput) -> Result<usize> {
        if self.0 >= NUM_ACTIONS {
            return Err(Error::InvalidArgument(format!("fixed action {} out of range", self.0)));
        }
        Ok(self.0)
    }
}

/// ε-greedy over a policy network's Q-values.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    net: Arc<PolicyNet>,
    epsilon: f64,
    rng: Rng,
}

impl GreedyPolicy {
    pub fn new(net: Arc<PolicyNet>, epsilon: f64, seed: u64) -> Self {
        Self {
            net,
            epsilon,
            rng: rng::stream(seed, Stream::Exploration, 0),
        }
    }
}

impl ActionPolicy for GreedyPolicy {
    fn choose(&mut self, input: &ElaInput) -> Result<usize> {
        let q = self.net.q_values(input)?;
        Ok(act(&q, self.epsilon, &mut self.rng))
    }
}

/// Result of one training rollout.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    /// Name of the problem the episode ran on.
    pub label: String,
    pub transitions: Vec<Transition>,
}

/// Something that can play one full episode with a given policy.
pub trait EpisodeSource: Sync {
    fn run(&self, episode: usize, seed: u64, policy: &mut dyn ActionPolicy) -> Result<EpisodeOutcome>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub workers: usize,
    pub seed: u64,
    pub dqn: DqnConfig,
    pub epsilon: EpsilonSchedule,
    pub ela: ElaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            workers: 1,
            seed: 0,
            dqn: DqnConfig::default(),
            epsilon: EpsilonSchedule::default(),
            ela: ElaConfig::default(),
        }
    }
}

/// Sliding-average width of the reward trace.
pub const REWARD_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Completion order.
    pub order: usize,
    /// Episode index as scheduled.
    pub episode: usize,
    pub label: String,
    pub reward: f64,
    /// Mean reward of the last [`REWARD_WINDOW`] completed episodes.
    pub sliding_avg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpisodeRecord>,
    pub updates: usize,
    pub discarded: usize,
    pub final_loss: Option<f64>,
}

/// Trailing mean over at most `window` values ending at each position.
pub fn sliding_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

struct Trainer {
    online: PolicyNet,
    target: PolicyNet,
    opt: crate::nn::Adam,
    buffer: ReplayBuffer,
    replay_rng: Rng,
    config: DqnConfig,
    steps: usize,
    report: TrainReport,
    rewards: Vec<f64>,
}

impl Trainer {
    fn absorb(&mut self, episode: usize, outcome: EpisodeOutcome) -> Result<()> {
        let reward: f64 = outcome.transitions.iter().map(|t| t.reward).sum();
        for t in outcome.transitions {
            self.buffer.push(t)?;
            self.steps += 1;
            if self.buffer.len() >= self.config.warmup.max(self.config.batch_size)
                && self.steps % self.config.steps_per_update == 0
            {
                let batch = self.buffer.sample(self.config.batch_size, &mut self.replay_rng)?;
                let loss = double_dqn_update(&mut self.online, &self.target, &mut self.opt, &batch, self.config.gamma)?;
                soft_update(&mut self.target, &self.online, self.config.tau)?;
                self.report.updates += 1;
                self.report.final_loss = Some(loss);
            }
        }
        self.rewards.push(reward);
        let avg = sliding_average(&self.rewards, REWARD_WINDOW);
        let order = self.report.records.len();
        log::info!(
            "episode {episode} [{}] reward {reward:.4} avg {:.4} buffer {} updates {}",
            outcome.label,
            avg[order],
            self.buffer.len(),
            self.report.updates
        );
        self.report.records.push(EpisodeRecord {
            order,
            episode,
            label: outcome.label,
            reward,
            sliding_avg: avg[order],
        });
        Ok(())
    }
}

fn episode_seed(seed: u64, episode: usize) -> u64 {
    rng::mix(seed ^ rng::mix(episode as u64 + 1))
}

fn run_guarded(
    source: &dyn EpisodeSource,
    episode: usize,
    seed: u64,
    policy: &mut dyn ActionPolicy,
) -> Result<EpisodeOutcome> {
    match catch_unwind(AssertUnwindSafe(|| source.run(episode, seed, policy))) {
        Ok(r) => r,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Err(Error::InvalidArgument(format!("episode {episode} panicked: {msg}")))
        }
    }
}

/// Train a policy over `config.episodes` rollouts.
///
/// Each rollout uses the policy snapshot current at its start. With one
/// worker everything runs on the calling thread and is reproducible.
pub fn train_meta(source: &dyn EpisodeSource, config: &TrainConfig) -> Result<(PolicyNet, TrainReport)> {
    config.dqn.validate()?;
    if config.workers == 0 {
        return Err(Error::Config("at least one worker is required".into()));
    }
    let online = PolicyNet::seeded(config.ela, config.dqn.hidden, config.seed)?;
    let mut trainer = Trainer {
        target: online.clone(),
        opt: online.optimizer(&config.dqn),
        online,
        buffer: ReplayBuffer::new(config.dqn.replay_capacity),
        replay_rng: rng::stream(config.seed, Stream::Replay, 0),
        config: config.dqn.clone(),
        steps: 0,
        report: TrainReport::default(),
        rewards: Vec::new(),
    };
    let eps = |e: usize| config.epsilon.value(e, config.episodes);

    if config.workers == 1 {
        for e in 0..config.episodes {
            let seed = episode_seed(config.seed, e);
            let mut policy = GreedyPolicy::new(Arc::new(trainer.online.clone()), eps(e), seed);
            match run_guarded(source, e, seed, &mut policy) {
                Ok(out) => trainer.absorb(e, out)?,
                Err(err) => {
                    log::warn!("discarding episode {e}: {err}");
                    trainer.report.discarded += 1;
                }
            }
        }
        return Ok((trainer.online, trainer.report));
    }

    let snapshot = Mutex::new(Arc::new(trainer.online.clone()));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<EpisodeOutcome>)>();
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..config.workers {
            let tx = tx.clone();
            let (snapshot, next) = (&snapshot, &next);
            scope.spawn(move || loop {
                let e = next.fetch_add(1, Ordering::SeqCst);
                if e >= config.episodes {
                    break;
                }
                let net = Arc::clone(&snapshot.lock().expect("snapshot lock"));
                let seed = episode_seed(config.seed, e);
                let mut policy = GreedyPolicy::new(net, eps(e), seed);
                let out = run_guarded(source, e, seed, &mut policy);
                if tx.send((e, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut failure = None;
        for (e, out) in rx {
            if failure.is_some() {
                continue;
            }
            match out {
                Ok(out) => {
                    if let Err(err) = trainer.absorb(e, out) {
                        // Stop handing out work; drain what is in flight.
                        next.store(config.episodes, Ordering::SeqCst);
                        failure = Some(err);
                        continue;
                    }
                    *snapshot.lock().expect("snapshot lock") = Arc::new(trainer.online.clone());
                }
                Err(err) => {
                    log::warn!("discarding episode {e}: {err}");
                    trainer.report.discarded += 1;
                }
            }
        }
        failure.map_or(Ok(()), Err)
    })?;
    Ok((trainer.online, trainer.report))
}
