//! Region-selection policy: action space, reward, Double DQN and the
//! rollout/training loop.

mod actions;
mod dqn;
mod train;

pub use actions::{
    action_interval, action_label, reward, select_region, ArchiveStats, LevelInterval, NUM_ACTIONS, TAIL_THRESHOLDS,
};
pub use dqn::{
    act, argmax, double_dqn_target, double_dqn_update, soft_update, DqnConfig, EpsilonSchedule, PolicyMeta, PolicyNet,
    ReplayBuffer, Transition, ELA_PREFIX,
};
pub use train::{
    sliding_average, train_meta, ActionPolicy, EpisodeOutcome, EpisodeRecord, EpisodeSource, FixedPolicy, GreedyPolicy,
    RandomPolicy, TrainConfig, TrainReport, REWARD_WINDOW,
};
