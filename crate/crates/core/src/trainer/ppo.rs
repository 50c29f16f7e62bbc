use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{log_softmax, Architecture, Model, PolicyParams, Tape, ValueParams};
use super::optim::Adam;
use super::rollout::{collect_rollouts, EpisodeSummary, Lane, RolloutEnv, TrajectoryBatch};
use super::{PpoConfig, TrainerError};
use crate::gridworld::{Channel, Events, Observation, RewardVector};
use crate::rng::{self, label, Rng};

/// Per-step training reward for a collected batch.
pub trait RewardFunction: Sync {
    fn rewards(&self, batch: &TrajectoryBatch) -> Result<Vec<f64>, TrainerError>;
}

/// Sum of built-in reward channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelReward(pub Vec<Channel>);

impl ChannelReward {
    pub fn single(channel: Channel) -> Self {
        Self(vec![channel])
    }

    pub fn total(&self, r: &RewardVector) -> f64 {
        self.0.iter().map(|&c| r.get(c)).sum()
    }
}

impl RewardFunction for ChannelReward {
    fn rewards(&self, batch: &TrajectoryBatch) -> Result<Vec<f64>, TrainerError> {
        Ok(batch.steps.iter().map(|s| self.total(&s.rewards)).collect())
    }
}

/// One PPO sample: the stored snapshot log-probability and its advantage.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample<'a> {
    pub obs: &'a Observation,
    pub action: usize,
    pub old_logp: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ValueSample<'a> {
    pub obs: &'a Observation,
    pub target: f64,
}

/// Diagnostics from the policy loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyLossParts {
    pub loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate loss with entropy bonus (to be minimized) and its
/// gradient with respect to `params`, averaged over `samples`.
pub fn policy_loss_and_grad(
    model: &Model,
    params: &[f64],
    samples: &[PolicySample<'_>],
    clip: f64,
    entropy_coef: f64,
    grad: &mut [f64],
) -> Result<PolicyLossParts, TrainerError> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / samples.len().max(1) as f64;
    let mut tape = Tape::default();
    let mut parts = PolicyLossParts::default();
    let mut d_out = vec![0.0; model.outputs];
    for s in samples {
        model.forward_with(params, s.obs, &mut tape)?;
        let logp = log_softmax(tape.output());
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let log_ratio = logp[s.action] - s.old_logp;
        let ratio = log_ratio.exp();
        let surr1 = ratio * s.advantage;
        let surr2 = ratio.clamp(1.0 - clip, 1.0 + clip) * s.advantage;
        let entropy: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        parts.loss += (-surr1.min(surr2) - entropy_coef * entropy) * scale;
        parts.entropy += entropy * scale;
        parts.approx_kl += ((ratio - 1.0) - log_ratio) * scale;
        if surr2 < surr1 {
            parts.clip_fraction += scale;
        }
        // d(-min)/d logp_a is -A*ratio on the unclipped branch and 0 on the plateau.
        let d_logp_a = if surr1 <= surr2 { -s.advantage * ratio } else { 0.0 };
        for j in 0..model.outputs {
            let onehot = if j == s.action { 1.0 } else { 0.0 };
            let d_surr = d_logp_a * (onehot - probs[j]);
            let d_ent = entropy_coef * probs[j] * (logp[j] + entropy);
            d_out[j] = (d_surr + d_ent) * scale;
        }
        model.backward(params, &tape, &d_out, grad);
    }
    if !parts.loss.is_finite() {
        return Err(TrainerError::NonFiniteLoss(format!("policy loss {parts:?}")));
    }
    Ok(parts)
}

/// Half mean squared error to the value targets, and its gradient.
pub fn value_loss_and_grad(
    model: &Model,
    params: &[f64],
    samples: &[ValueSample<'_>],
    grad: &mut [f64],
) -> Result<f64, TrainerError> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / samples.len().max(1) as f64;
    let mut tape = Tape::default();
    let mut loss = 0.0;
    for s in samples {
        model.forward_with(params, s.obs, &mut tape)?;
        let err = tape.output()[0] - s.target;
        loss += 0.5 * err * err * scale;
        model.backward(params, &tape, &[err * scale], grad);
    }
    if !loss.is_finite() {
        return Err(TrainerError::NonFiniteLoss(format!("value loss {loss}")));
    }
    Ok(loss)
}

fn clip_norm(grad: &mut [f64], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let s = max / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Several epochs of minibatch PPO on a batch whose advantages and returns
/// are already computed.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    policy: &mut PolicyParams,
    value: &mut ValueParams,
    policy_opt: &mut Adam,
    value_opt: &mut Adam,
    batch: &TrajectoryBatch,
    config: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateStats, TrainerError> {
    let n = batch.len();
    if n == 0 || batch.advantages.len() != n {
        return Err(TrainerError::InvalidConfig("advantages missing for batch".into()));
    }
    let mut adv = batch.advantages.clone();
    if config.standardize_advantages {
        let mean = adv.iter().sum::<f64>() / n as f64;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt().max(1e-8);
        adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut pgrad = vec![0.0; policy.0.num_params()];
    let mut vgrad = vec![0.0; value.0.num_params()];
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            let ps: Vec<PolicySample<'_>> = chunk
                .iter()
                .map(|&i| PolicySample {
                    obs: &batch.steps[i].obs,
                    action: batch.steps[i].action,
                    old_logp: batch.steps[i].logp,
                    advantage: adv[i],
                })
                .collect();
            let vs: Vec<ValueSample<'_>> = chunk
                .iter()
                .map(|&i| ValueSample {
                    obs: &batch.steps[i].obs,
                    target: batch.returns[i],
                })
                .collect();
            let parts = policy_loss_and_grad(&policy.0, &policy.0.params, &ps, config.clip, config.entropy_coef, &mut pgrad)?;
            let vloss = value_loss_and_grad(&value.0, &value.0.params, &vs, &mut vgrad)?;
            clip_norm(&mut pgrad, config.max_grad_norm);
            clip_norm(&mut vgrad, config.max_grad_norm);
            policy_opt.step(&mut policy.0.params, &pgrad, config.learning_rate);
            value_opt.step(&mut value.0.params, &vgrad, config.value_learning_rate);
            stats.policy_loss += parts.loss;
            stats.value_loss += vloss;
            stats.entropy += parts.entropy;
            stats.approx_kl += parts.approx_kl;
            stats.clip_fraction += parts.clip_fraction;
            count += 1.0;
        }
    }
    if count > 0.0 {
        stats.policy_loss /= count;
        stats.value_loss /= count;
        stats.entropy /= count;
        stats.approx_kl /= count;
        stats.clip_fraction /= count;
    }
    Ok(stats)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct IterationStats {
    pub iteration: u64,
    /// Cumulative environment steps.
    pub env_steps: u64,
    pub episodes: usize,
    /// Mean per-channel episode return over episodes finished this iteration.
    pub mean_returns: RewardVector,
    pub mean_events: [f64; 8],
    pub mean_training_reward: f64,
    pub update: UpdateStats,
}

fn summarize(episodes: &[EpisodeSummary]) -> (RewardVector, [f64; 8]) {
    let mut r = RewardVector::default();
    let mut e = Events::default();
    for ep in episodes {
        r.accumulate(&ep.rewards);
        e.accumulate(&ep.events);
    }
    let n = episodes.len().max(1) as f64;
    let mut mean = RewardVector::default();
    for c in [Channel::R0Red, Channel::R1Green, Channel::R0Env] {
        mean.add(c, r.get(c) / n);
    }
    let ev = [e.melee, e.ranged, e.loot, e.orb, e.death_tile, e.impossible, e.red, e.green].map(|x| x as f64 / n);
    (mean, ev)
}

/// Rollout/update loop state. Everything is a function of the initial
/// parameters, the environment, the config and `seed`.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub policy: PolicyParams,
    pub value: ValueParams,
    policy_opt: Adam,
    value_opt: Adam,
    config: PpoConfig,
    env: RolloutEnv,
    lanes: Vec<Lane>,
    seed: u64,
    iteration: u64,
    env_steps: u64,
}

impl Trainer {
    pub fn new(
        policy: PolicyParams,
        value: ValueParams,
        env: RolloutEnv,
        config: PpoConfig,
        seed: u64,
    ) -> Result<Self, TrainerError> {
        config.validate()?;
        env.check_policy(&policy)?;
        if policy.arch() != &value.0.arch {
            return Err(TrainerError::DescriptorMismatch("policy and value architectures differ".into()));
        }
        let adam = |n| Adam::new(n, config.adam_beta1, config.adam_beta2, config.adam_eps);
        Ok(Self {
            policy_opt: adam(policy.0.num_params()),
            value_opt: adam(value.0.num_params()),
            lanes: Lane::lanes(&env, config.lanes),
            policy,
            value,
            config,
            env,
            seed,
            iteration: 0,
            env_steps: 0,
        })
    }

    /// Fresh networks initialized from `seed`.
    pub fn from_scratch(arch: Architecture, env: RolloutEnv, config: PpoConfig, seed: u64) -> Result<Self, TrainerError> {
        let mut r = rng::stream(seed, &[label::POLICY_INIT]);
        let policy = PolicyParams::new(arch.clone(), env.spec.num_actions(), &mut r);
        let value = ValueParams::new(arch, &mut r);
        Self::new(policy, value, env, config, seed)
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn env(&self) -> &RolloutEnv {
        &self.env
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Swaps the environment, keeping networks and optimizer state.
    pub fn set_env(&mut self, env: RolloutEnv) -> Result<(), TrainerError> {
        env.check_policy(&self.policy)?;
        self.lanes = Lane::lanes(&env, self.config.lanes);
        self.env = env;
        Ok(())
    }

    /// Rollouts from the current snapshot.
    pub fn collect(&mut self) -> Result<TrajectoryBatch, TrainerError> {
        let batch = collect_rollouts(
            &self.policy,
            &self.value,
            &self.env,
            &mut self.lanes,
            self.config.steps_per_lane(),
            self.seed,
            self.iteration,
        )?;
        self.env_steps += batch.len() as u64;
        Ok(batch)
    }

    /// GAE on `rewards` followed by a PPO update; advances the iteration.
    pub fn update(&mut self, batch: &mut TrajectoryBatch, rewards: &[f64]) -> Result<UpdateStats, TrainerError> {
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(TrainerError::NonFiniteLoss("non-finite training reward".into()));
        }
        batch.compute_advantages(rewards, self.config.gamma, self.config.lambda);
        let mut r = rng::stream(self.seed, &[label::MINIBATCH, self.iteration]);
        let stats = ppo_update(
            &mut self.policy,
            &mut self.value,
            &mut self.policy_opt,
            &mut self.value_opt,
            batch,
            &self.config,
            &mut r,
        )?;
        self.iteration += 1;
        Ok(stats)
    }

    pub fn iterate(&mut self, reward: &dyn RewardFunction) -> Result<IterationStats, TrainerError> {
        let mut batch = self.collect()?;
        let rewards = reward.rewards(&batch)?;
        let iteration = self.iteration;
        let update = self.update(&mut batch, &rewards)?;
        let (mean_returns, mean_events) = summarize(&batch.episodes);
        Ok(IterationStats {
            iteration,
            env_steps: self.env_steps,
            episodes: batch.episodes.len(),
            mean_returns,
            mean_events,
            mean_training_reward: rewards.iter().sum::<f64>() / rewards.len().max(1) as f64,
            update,
        })
    }

    /// Runs `iterations` rollout/update rounds, reporting each to `hook`.
    pub fn run(
        &mut self,
        reward: &dyn RewardFunction,
        iterations: usize,
        mut hook: impl FnMut(&IterationStats),
    ) -> Result<(), TrainerError> {
        for _ in 0..iterations {
            let stats = self.iterate(reward)?;
            log::debug!(
                "iter {} steps {} episodes {} return {:?} entropy {:.3}",
                stats.iteration,
                stats.env_steps,
                stats.episodes,
                stats.mean_returns,
                stats.update.entropy
            );
            hook(&stats);
        }
        Ok(())
    }
}
