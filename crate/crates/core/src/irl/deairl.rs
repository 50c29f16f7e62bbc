//! The DE-AIRL training loop, the frozen learned reward and its checkpoint.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{collect_demos, standardize_rewards, DemoSet, DiscSample, Discriminator, IrlError, RunningStats};
use crate::control::{Controller, TrainedPolicy};
use crate::gridworld::{encode, Channel, EnvKind, EnvSpec, ExpertKind, FeatureSet, GridState, LevelSource, StepMode};
use crate::harness::{evaluate_rewards, HarnessError, StepScorer};
use crate::persist::{self, PersistError};
use crate::rng::{self, label};
use crate::trainer::{
    log_softmax, Adam, Architecture, Checkpoint, PolicyParams, PpoConfig, ValueParams, RewardFunction, RolloutEnv, Trainer, TrainerError,
    TrajectoryBatch,
};

pub const REWARD_FORMAT_VERSION: u32 = 1;
const REWARD_KIND: &str = "reward-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct AirlConfig {
    /// SeedEnv size.
    pub n: usize,
    /// PPO iterations per discriminator step.
    pub k_rl: usize,
    /// Target standard deviation of the standardized learned reward.
    pub sigma: f64,
    /// Fixed horizon; `None` uses the environment default.
    pub horizon: Option<usize>,
    pub disc_learning_rate: f64,
    /// Discount inside the shaping term.
    pub gamma: f64,
    pub outer_iterations: usize,
    /// Extra PPO iterations on ProcEnv with the frozen reward.
    pub deploy_iterations: usize,
}

impl Default for AirlConfig {
    fn default() -> Self {
        Self {
            n: 10,
            k_rl: 5,
            sigma: 0.2,
            horizon: None,
            disc_learning_rate: 0.2,
            gamma: 0.99,
            outer_iterations: 20,
            deploy_iterations: 0,
        }
    }
}

impl AirlConfig {
    pub fn validate(&self) -> Result<(), IrlError> {
        let bad = |m: &str| Err(IrlError::InvalidConfig(m.to_string()));
        if self.n == 0 {
            return bad("SeedEnv needs at least one level");
        }
        if self.k_rl == 0 {
            return bad("k-rl must be at least 1");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if self.horizon == Some(0) {
            return bad("horizon must be positive");
        }
        if self.disc_learning_rate.is_nan() || self.disc_learning_rate < 0.0 || !(0.0..=1.0).contains(&self.gamma) {
            return bad("learning rate must be non-negative and gamma in [0,1]");
        }
        Ok(())
    }

    pub fn horizon_for(&self, kind: EnvKind) -> usize {
        self.horizon.unwrap_or(kind.fixed_horizon())
    }
}

/// `f(s,a,s') - ln pi(a|s)` with the acting snapshot's log-probability,
/// standardized per batch.
#[derive(Debug)]
pub struct LearnedReward {
    pub discriminator: Discriminator,
    pub sigma: f64,
    running: Mutex<RunningStats>,
}

impl LearnedReward {
    pub fn new(discriminator: Discriminator, sigma: f64) -> Self {
        Self {
            discriminator,
            sigma,
            running: Mutex::new(RunningStats::default()),
        }
    }

    /// Unstandardized rewards of `batch`.
    pub fn raw(&self, batch: &TrajectoryBatch) -> Vec<f64> {
        batch
            .steps
            .iter()
            .map(|s| self.discriminator.f(&s.obs, s.action, &s.next_obs) - s.logp)
            .collect()
    }

    pub fn running(&self) -> RunningStats {
        *self.running.lock().expect("reward statistics lock")
    }
}

impl RewardFunction for LearnedReward {
    fn rewards(&self, batch: &TrajectoryBatch) -> Result<Vec<f64>, TrainerError> {
        let raw = self.raw(batch);
        let mut running = self.running.lock().expect("reward statistics lock");
        Ok(standardize_rewards(&raw, self.sigma, &mut running))
    }
}

/// Learned reward as an evaluation channel: `f(s,a,s')` on the full
/// observation. The `-ln pi` term is left out because it depends on the
/// policy being scored.
#[derive(Debug, Clone)]
pub struct LearnedChannel {
    pub name: String,
    pub discriminator: Discriminator,
}

impl StepScorer for LearnedChannel {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, before: &GridState, action: usize, after: &GridState) -> f64 {
        self.discriminator
            .f(&encode(before, FeatureSet::ALL), action, &encode(after, FeatureSet::ALL))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct OuterStats {
    pub outer: usize,
    pub disc_loss: f64,
    /// Mean discriminator output on expert and on policy samples.
    pub expert_d: f64,
    pub policy_d: f64,
    pub env_steps: u64,
}

#[derive(Debug, Clone)]
pub struct DeAirlOutcome {
    pub discriminator: Discriminator,
    pub demos: DemoSet,
    pub trainer: Trainer,
    pub config: AirlConfig,
    pub history: Vec<OuterStats>,
    pub spec: EnvSpec,
    pub seed: u64,
}

impl DeAirlOutcome {
    pub fn policy(&self) -> Result<TrainedPolicy, TrainerError> {
        TrainedPolicy::new(self.trainer.policy.clone(), self.spec.kind, FeatureSet::ALL)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.trainer.policy,
            &self.trainer.value,
            self.trainer.config(),
            self.seed,
            &self.spec,
            FeatureSet::ALL,
            self.trainer.env_steps(),
        )
    }

    pub fn reward_checkpoint(&self) -> RewardCheckpoint {
        RewardCheckpoint {
            feature_schema: self.spec.fingerprint(),
            expert: self.demos.header.expert,
            env: self.spec,
            discriminator: self.discriminator.clone(),
            sigma: self.config.sigma,
            config: self.config.clone(),
        }
    }

    pub fn reward(&self) -> LearnedReward {
        LearnedReward::new(self.discriminator.clone(), self.config.sigma)
    }
}

fn mean_d(disc: &Discriminator, samples: &[DiscSample<'_>], expert: bool) -> f64 {
    let xs: Vec<f64> = samples
        .iter()
        .filter(|s| s.expert == expert)
        .map(|s| super::sigmoid(disc.f(s.obs, s.action, s.next_obs) - s.logp))
        .collect();
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Fixed-horizon ProcEnv used after reward learning.
pub fn proc_env(spec: &EnvSpec, horizon: usize, seed: u64) -> Result<RolloutEnv, TrainerError> {
    Ok(RolloutEnv::procedural(*spec, rng::derive_seed(seed, &[label::PROC_ENV]))?.with_mode(StepMode::FixedHorizon(horizon)))
}

/// Collects demonstrations of `expert` on SeedEnv(n), then alternates one
/// discriminator step with `k_rl` PPO iterations on the standardized
/// learned reward. The batch that fed the discriminator step also feeds the
/// first of those PPO iterations.
pub fn train_deairl(
    spec: &EnvSpec,
    expert: ExpertKind,
    config: &AirlConfig,
    ppo: &PpoConfig,
    arch: Architecture,
    seed: u64,
) -> Result<DeAirlOutcome, IrlError> {
    train_deairl_from(spec, expert, config, ppo, Generator::Fresh(arch), seed)
}

/// Starting point of the sub-policy being trained.
#[derive(Debug, Clone)]
pub enum Generator {
    Fresh(Architecture),
    WarmStart(PolicyParams, ValueParams),
}

pub fn train_deairl_from(
    spec: &EnvSpec,
    expert: ExpertKind,
    config: &AirlConfig,
    ppo: &PpoConfig,
    generator: Generator,
    seed: u64,
) -> Result<DeAirlOutcome, IrlError> {
    config.validate()?;
    let horizon = config.horizon_for(spec.kind);
    let demos = collect_demos(spec, expert, config.n, horizon, seed)?;
    let levels = demos
        .header
        .level_seeds
        .iter()
        .map(|&s| spec.level(s))
        .collect::<Result<Vec<_>, _>>()?;
    let env = RolloutEnv::procedural(*spec, seed)?
        .with_levels(LevelSource::Fixed(levels))
        .with_mode(StepMode::FixedHorizon(horizon));
    let mut trainer = match generator {
        Generator::Fresh(arch) => Trainer::from_scratch(arch, env, ppo.clone(), seed)?,
        Generator::WarmStart(p, v) => Trainer::new(p, v, env, ppo.clone(), seed)?,
    };
    let mut disc = Discriminator::zeros(spec.kind.feature_dim(), spec.num_actions(), config.gamma);
    let mut opt = Adam::new(disc.num_params(), ppo.adam_beta1, ppo.adam_beta2, ppo.adam_eps);
    let mut history = Vec::with_capacity(config.outer_iterations);

    for outer in 0..config.outer_iterations {
        let mut batch = trainer.collect()?;
        let expert_logp = demos
            .transitions()
            .map(|t| Ok(log_softmax(&trainer.policy.logits(&t.obs)?)[t.action]))
            .collect::<Result<Vec<f64>, TrainerError>>()?;
        let mut samples: Vec<DiscSample<'_>> = demos
            .transitions()
            .zip(&expert_logp)
            .map(|(t, &logp)| DiscSample {
                obs: &t.obs,
                action: t.action,
                next_obs: &t.next_obs,
                logp,
                expert: true,
            })
            .collect();
        samples.extend(batch.steps.iter().map(|s| DiscSample {
            obs: &s.obs,
            action: s.action,
            next_obs: &s.next_obs,
            logp: s.logp,
            expert: false,
        }));
        let disc_loss = disc.update(&samples, &mut opt, config.disc_learning_rate)?;
        let stats = OuterStats {
            outer,
            disc_loss,
            expert_d: mean_d(&disc, &samples, true),
            policy_d: mean_d(&disc, &samples, false),
            env_steps: trainer.env_steps(),
        };
        drop(samples);

        let reward = LearnedReward::new(disc.clone(), config.sigma);
        let r = reward.rewards(&batch)?;
        trainer.update(&mut batch, &r)?;
        trainer.run(&reward, config.k_rl - 1, |_| {})?;
        log::debug!(
            "outer {outer} loss {disc_loss:.4} D(expert) {:.3} D(policy) {:.3}",
            stats.expert_d,
            stats.policy_d
        );
        history.push(stats);
    }

    if config.deploy_iterations > 0 {
        trainer.set_env(proc_env(spec, horizon, seed)?)?;
        let reward = LearnedReward::new(disc.clone(), config.sigma);
        trainer.run(&reward, config.deploy_iterations, |_| {})?;
    }

    Ok(DeAirlOutcome {
        discriminator: disc,
        demos,
        trainer,
        config: config.clone(),
        history,
        spec: *spec,
        seed,
    })
}

/// Reward channels an expert is built to maximize.
pub fn expert_channels(expert: ExpertKind) -> Vec<Channel> {
    match expert {
        ExpertKind::RedCollector => vec![Channel::R0Red],
        ExpertKind::GreenCollector => vec![Channel::R1Green],
        _ => vec![Channel::R0Env],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GeneralizationReport {
    pub expert: ExpertKind,
    pub channels: Vec<Channel>,
    pub policy_mean: f64,
    pub expert_mean: f64,
    pub ratio: f64,
    pub episodes: usize,
    pub seed: u64,
    pub env_steps: u64,
}

/// True-channel return of `agent` against `expert` on held-out levels
/// (terminal mode, random opponent).
pub fn compare_to_expert(
    agent: &dyn Controller,
    expert: ExpertKind,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<GeneralizationReport, HarnessError> {
    let held_out = rng::derive_seed(seed, &[label::HELD_OUT]);
    let channels = expert_channels(expert);
    let opp = ExpertKind::RandomOpponent;
    let policy_mean = evaluate_rewards(agent, &opp, spec, episodes, held_out)?.mean_of(&channels);
    let expert_mean = evaluate_rewards(&expert, &opp, spec, episodes, held_out)?.mean_of(&channels);
    Ok(GeneralizationReport {
        expert,
        channels,
        policy_mean,
        expert_mean,
        ratio: if expert_mean != 0.0 { policy_mean / expert_mean } else { 0.0 },
        episodes,
        seed,
        env_steps: 0,
    })
}

/// Trains a fresh policy on ProcEnv against the frozen learned reward and
/// compares its true-channel return with the expert's on held-out levels.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_reward_generalization(
    discriminator: &Discriminator,
    sigma: f64,
    spec: &EnvSpec,
    expert: ExpertKind,
    arch: Architecture,
    ppo: &PpoConfig,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<(GeneralizationReport, Trainer), IrlError> {
    let reward = LearnedReward::new(discriminator.clone(), sigma);
    let mut trainer = Trainer::from_scratch(arch, proc_env(spec, horizon, seed)?, ppo.clone(), seed)?;
    trainer.run(&reward, ppo.iterations, |_| {})?;
    let policy = TrainedPolicy::new(trainer.policy.clone(), spec.kind, FeatureSet::ALL)?;
    let mut report = compare_to_expert(&policy, expert, spec, episodes, seed)?;
    report.env_steps = trainer.env_steps();
    Ok((report, trainer))
}

/// Frozen reward and shaping models with the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RewardCheckpoint {
    pub feature_schema: String,
    pub expert: ExpertKind,
    pub env: EnvSpec,
    pub discriminator: Discriminator,
    pub sigma: f64,
    pub config: AirlConfig,
}

impl RewardCheckpoint {
    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, REWARD_KIND, REWARD_FORMAT_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        persist::load(path, REWARD_KIND, REWARD_FORMAT_VERSION)
    }

    pub fn reward(&self) -> LearnedReward {
        LearnedReward::new(self.discriminator.clone(), self.sigma)
    }
}
