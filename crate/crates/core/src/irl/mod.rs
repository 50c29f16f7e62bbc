//! Adversarial IRL with the demonstration-efficient stabilizers: reward
//! standardization, several forward-RL iterations per discriminator step,
//! fixed-horizon episodes and training on a small frozen level set.

mod airl;
mod demos;
mod deairl;

pub use airl::{
    discriminator_prob, learned_reward, potential_f, sigmoid, softplus, DiscSample, Discriminator, RewardModel,
    ShapingModel,
};
pub use demos::{collect_demos, DemoHeader, DemoSet, Transition, DEMO_FORMAT_VERSION};
pub use deairl::{
    compare_to_expert, evaluate_reward_generalization, expert_channels, proc_env, train_deairl, train_deairl_from, Generator, AirlConfig, DeAirlOutcome, GeneralizationReport, LearnedChannel, LearnedReward,
    OuterStats, RewardCheckpoint, REWARD_FORMAT_VERSION,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::GridError;
use crate::persist::PersistError;
use crate::trainer::TrainerError;

#[derive(Debug, Error)]
pub enum IrlError {
    #[error("policy probability {0} is not positive")]
    ZeroPolicyProbability(f64),
    #[error("non-finite discriminator loss: {0}")]
    NonFiniteLoss(f64),
    #[error("discriminator batch needs both expert and policy samples")]
    EmptyBatch,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("demo set: {0}")]
    BadDemos(String),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Harness(Box<crate::harness::HarnessError>),
}

impl From<crate::harness::HarnessError> for IrlError {
    fn from(e: crate::harness::HarnessError) -> Self {
        IrlError::Harness(Box::new(e))
    }
}

/// Welford accumulator over every value passed through
/// [`standardize_rewards`]; kept for diagnostics only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

/// `(x - mean) / max(std, 1e-8) * sigma` with population statistics of the
/// batch itself.
pub fn standardize_rewards(values: &[f64], sigma: f64, running: &mut RunningStats) -> Vec<f64> {
    for &v in values {
        running.push(v);
    }
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    values.iter().map(|v| (v - mean) / std * sigma).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn standardize_examples() {
        let mut rs = RunningStats::default();
        let out = standardize_rewards(&[1.0, 2.0, 3.0], 1.0, &mut rs);
        let k = (1.5f64).sqrt();
        assert!((out[0] + k).abs() < 1e-12 && out[1].abs() < 1e-12 && (out[2] - k).abs() < 1e-12);
        assert_eq!(standardize_rewards(&[4.0; 5], 0.2, &mut rs), vec![0.0; 5]);
        assert_eq!(rs.count, 8);
    }

    #[test]
    fn standardize_moments_and_idempotence() {
        let mut r = rng::stream(3, &[]);
        let mut rs = RunningStats::default();
        for _ in 0..100 {
            let n = r.random_range(2..500);
            let xs: Vec<f64> = (0..n).map(|_| r.random_range(-50.0..50.0)).collect();
            let out = standardize_rewards(&xs, 0.2, &mut rs);
            let m = out.iter().sum::<f64>() / n as f64;
            let sd = (out.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
            assert!(m.abs() < 1e-9);
            assert!((sd - 0.2).abs() < 1e-6);
            let again = standardize_rewards(&out, 0.2, &mut rs);
            for (a, b) in again.iter().zip(&out) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
