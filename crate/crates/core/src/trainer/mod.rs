//! PPO with clipped surrogate and GAE over tabular and small-MLP policies.

mod checkpoint;
mod gae;
mod gradcheck;
mod model;
mod optim;
mod ppo;
mod rollout;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gae::{compute_gae, discounted_returns};
pub use gradcheck::{check_gradients, max_relative_error, FD_STEP, RELATIVE_FLOOR};
pub use model::{log_softmax, Architecture, Model, PolicyParams, Tape, ValueParams};
pub use optim::Adam;
pub use ppo::{
    policy_loss_and_grad, ppo_update, value_loss_and_grad, ChannelReward, IterationStats, PolicyLossParts,
    PolicySample, RewardFunction, Trainer, UpdateStats, ValueSample,
};
pub use rollout::{collect_rollouts, EpisodeSummary, Lane, RolloutEnv, Step, TrajectoryBatch};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusionError;
use crate::gridworld::GridError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainerError {
    #[error("observation does not fit the policy: {0}")]
    EncodingMismatch(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("checkpoint does not match environment: {0}")]
    DescriptorMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub value_learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    /// Transitions per iteration, split evenly over `lanes`.
    pub rollout_length: usize,
    pub lanes: usize,
    pub iterations: usize,
    pub standardize_advantages: bool,
    pub max_grad_norm: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            learning_rate: 3e-3,
            value_learning_rate: 3e-3,
            epochs: 4,
            minibatch_size: 256,
            entropy_coef: 0.01,
            rollout_length: 2048,
            lanes: 8,
            iterations: 50,
            standardize_advantages: true,
            max_grad_norm: Some(0.5),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: &str| Err(TrainerError::InvalidConfig(m.to_string()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0,1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0,1]");
        }
        if !(self.learning_rate >= 0.0 && self.value_learning_rate >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.lanes == 0 || self.rollout_length < self.lanes {
            return bad("need at least one transition per lane");
        }
        if self.minibatch_size == 0 {
            return bad("minibatch size must be positive");
        }
        if !self.entropy_coef.is_finite() {
            return bad("entropy coefficient must be finite");
        }
        Ok(())
    }

    pub fn steps_per_lane(&self) -> usize {
        self.rollout_length / self.lanes
    }
}

/// Trains fresh networks for `config.iterations` iterations.
pub fn train(
    arch: Architecture,
    env: RolloutEnv,
    reward: &dyn RewardFunction,
    config: PpoConfig,
    seed: u64,
) -> Result<Trainer, TrainerError> {
    let iterations = config.iterations;
    let mut t = Trainer::from_scratch(arch, env, config, seed)?;
    t.run(reward, iterations, |_| {})?;
    Ok(t)
}

/// Continues training from `checkpoint` with a fresh optimizer.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    env: RolloutEnv,
    reward: &dyn RewardFunction,
    config: PpoConfig,
    seed: u64,
) -> Result<Trainer, TrainerError> {
    checkpoint.check_env(&env.spec)?;
    let iterations = config.iterations;
    let mut t = Trainer::new(checkpoint.policy()?, checkpoint.value()?, env, config, seed)?;
    t.run(reward, iterations, |_| {})?;
    Ok(t)
}
