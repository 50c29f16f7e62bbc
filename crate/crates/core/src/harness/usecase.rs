//! Use-case runs: train (or load) the policies a use-case needs, build the
//! fused agents and baselines, evaluate them on the same seeded episodes
//! and normalize against the specialists.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::report::{
    normalize_rewards, Baseline, ChannelResult, ConfigResult, ExperimentSpec, JobKind, LedgerEntry, MetricsReport,
    Normalizer, TrainingJob, TrainingLedger, UseCase,
};
use super::{evaluate_rewards, run_scored_episodes, HarnessError, StepScorer, StyleStats, WinStats};
use crate::control::{Controller, TrainedPolicy};
use crate::fusion::{FusionEnsemble, FusionMethod};
use crate::gridworld::{Channel, EnvKind, EnvSpec, ExpertKind, FeatureSet, ARENA_FEATURES, COLLECT_STATES};
use crate::irl::{train_deairl, LearnedChannel, LearnedReward, RewardCheckpoint};
use crate::rng::{self, label};
use crate::trainer::{
    fine_tune, train, Architecture, ChannelReward, Checkpoint, PpoConfig, RewardFunction, RolloutEnv, TrainerError,
    TrajectoryBatch,
};

/// Hard-coded channel plus standardized learned rewards.
struct CombinedReward {
    base: ChannelReward,
    learned: Vec<LearnedReward>,
}

impl RewardFunction for CombinedReward {
    fn rewards(&self, batch: &TrajectoryBatch) -> Result<Vec<f64>, TrainerError> {
        let mut r = self.base.rewards(batch)?;
        for l in &self.learned {
            for (x, y) in r.iter_mut().zip(l.rewards(batch)?) {
                *x += y;
            }
        }
        Ok(r)
    }
}

struct Trained {
    checkpoint: Checkpoint,
    reward: Option<RewardCheckpoint>,
}

impl Trained {
    fn policy(&self, kind: EnvKind) -> Result<TrainedPolicy, HarnessError> {
        Ok(TrainedPolicy::new(self.checkpoint.policy()?, kind, self.checkpoint.known)?)
    }
}

/// A policy available for fusion, with the learned channel it was trained
/// on (if any).
struct Member {
    name: String,
    policy: Arc<TrainedPolicy>,
    channel: Option<LearnedChannel>,
}

fn flag_tag(flags: FeatureSet) -> String {
    let list = flags.to_list();
    if list.is_empty() {
        return "none".into();
    }
    let names: Vec<String> = list
        .iter()
        .map(|f| serde_json::to_value(f).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
        .collect();
    names.join("+")
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    jobs: Vec<TrainingJob>,
    ledger: Vec<LedgerEntry>,
    failures: Vec<String>,
}

impl<'a> Runner<'a> {
    fn new(spec: &'a ExperimentSpec) -> Self {
        Self {
            spec,
            jobs: Vec::new(),
            ledger: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Training seed of `role`: independent of which use-case asks for it,
    /// so cached checkpoints are shared.
    fn seed_for(&self, role: &str) -> u64 {
        let h = Sha256::digest(role.as_bytes());
        let id = u64::from_le_bytes(h[..8].try_into().expect("digest is 32 bytes"));
        rng::derive_seed(self.spec.seed, &[label::JOB, id])
    }

    fn path(&self, role: &str, suffix: &str) -> Option<PathBuf> {
        self.spec
            .checkpoints
            .as_ref()
            .map(|d| d.join(format!("{role}-s{}{suffix}.json", self.spec.seed)))
    }

    fn load_cached(
        &self,
        role: &str,
        env: &EnvSpec,
        seed: u64,
        config: &PpoConfig,
        learned: bool,
    ) -> Result<Option<Trained>, HarnessError> {
        let Some(path) = self.path(role, "") else {
            return Ok(None);
        };
        if !path.exists() {
            return Ok(None);
        }
        let checkpoint = Checkpoint::load(&path)?;
        if checkpoint.check_env(env).is_err() {
            log::warn!("{} was trained on another observation space, retraining", path.display());
            return Ok(None);
        }
        if checkpoint.master_seed != seed || checkpoint.config != *config || checkpoint.known != env.flags {
            log::warn!("{} was trained with other settings, retraining", path.display());
            return Ok(None);
        }
        let reward = if learned {
            let rp = self.path(role, ".reward").expect("cache directory set");
            if !rp.exists() {
                return Ok(None);
            }
            let r = RewardCheckpoint::load(&rp)?;
            if r.config != self.spec.budget.airl {
                log::warn!("{} was trained with other settings, retraining", rp.display());
                return Ok(None);
            }
            Some(r)
        } else {
            None
        };
        Ok(Some(Trained { checkpoint, reward }))
    }

    /// Loads `role` from the cache or trains it with `run(seed)`.
    fn obtain(
        &mut self,
        role: &str,
        kind: JobKind,
        env: &EnvSpec,
        config: &PpoConfig,
        run: impl FnOnce(u64) -> Result<Trained, HarnessError>,
    ) -> Result<Trained, HarnessError> {
        let seed = self.seed_for(role);
        let learned = kind == JobKind::DeAirl;
        let (trained, wall) = match self.load_cached(role, env, seed, config, learned)? {
            Some(t) => (t, None),
            None => {
                let t0 = Instant::now();
                let t = run(seed)?;
                let wall = t0.elapsed().as_secs_f64();
                if let Some(p) = self.path(role, "") {
                    t.checkpoint.save(&p)?;
                }
                if let (Some(p), Some(r)) = (self.path(role, ".reward"), &t.reward) {
                    r.save(&p)?;
                }
                (t, Some(wall))
            }
        };
        log::info!("{role}: {} env steps", trained.checkpoint.env_steps);
        self.jobs.push(TrainingJob {
            role: role.to_string(),
            kind,
            env: *env,
            env_steps: trained.checkpoint.env_steps,
        });
        self.ledger.push(LedgerEntry {
            role: role.to_string(),
            env_steps: trained.checkpoint.env_steps,
            wall_seconds: wall,
            cached: wall.is_none(),
        });
        Ok(trained)
    }

    fn ppo_job(
        &mut self,
        role: &str,
        env: EnvSpec,
        arch: Architecture,
        reward: &dyn RewardFunction,
        config: PpoConfig,
    ) -> Result<Trained, HarnessError> {
        let expected = config.clone();
        self.obtain(role, JobKind::Ppo, &env, &expected, |seed| {
            let t = train(arch, RolloutEnv::procedural(env, seed)?, reward, config, seed)?;
            let checkpoint = Checkpoint::new(&t.policy, &t.value, t.config(), seed, &env, env.flags, t.env_steps());
            Ok(Trained {
                checkpoint,
                reward: None,
            })
        })
    }

    fn fine_tune_job(
        &mut self,
        role: &str,
        base: &Checkpoint,
        env: EnvSpec,
        reward: &dyn RewardFunction,
        config: PpoConfig,
    ) -> Result<Trained, HarnessError> {
        let expected = config.clone();
        self.obtain(role, JobKind::FineTune, &env, &expected, |seed| {
            let t = fine_tune(base, RolloutEnv::procedural(env, seed)?, reward, config, seed)?;
            let checkpoint = Checkpoint::new(&t.policy, &t.value, t.config(), seed, &env, env.flags, t.env_steps());
            Ok(Trained {
                checkpoint,
                reward: None,
            })
        })
    }

    fn sub_job(&mut self, expert: ExpertKind, env: EnvSpec) -> Result<Member, HarnessError> {
        let role = format!("sub-{expert}-{}", flag_tag(env.flags));
        let budget = &self.spec.budget;
        let (airl, ppo) = (budget.airl.clone(), budget.sub.clone());
        let arch = Architecture::mlp(ARENA_FEATURES, &budget.arena_hidden);
        let t = self.obtain(&role, JobKind::DeAirl, &env, &ppo.clone(), |seed| {
            let out = train_deairl(&env, expert, &airl, &ppo, arch, seed).map_err(irl_error)?;
            let mut checkpoint = out.checkpoint();
            // Trained before any later design change: sees only its own version.
            checkpoint.known = env.flags;
            Ok(Trained {
                checkpoint,
                reward: Some(out.reward_checkpoint()),
            })
        })?;
        let reward = t.reward.as_ref().expect("DE-AIRL jobs carry a reward model");
        Ok(Member {
            name: expert.to_string(),
            policy: Arc::new(t.policy(EnvKind::ArenaWorld)?),
            channel: Some(LearnedChannel {
                name: String::new(),
                discriminator: reward.discriminator.clone(),
            }),
        })
    }

    fn fail(&mut self, what: &str, e: impl std::fmt::Display) {
        log::error!("{what}: {e}");
        self.failures.push(format!("{what}: {e}"));
    }
}

fn irl_error(e: crate::irl::IrlError) -> HarnessError {
    match e {
        crate::irl::IrlError::Trainer(t) => HarnessError::Trainer(t),
        crate::irl::IrlError::Harness(h) => *h,
        other => HarnessError::Training(other.to_string()),
    }
}

/// Raw evaluation of one agent before normalization.
struct Raw {
    id: String,
    method: Option<FusionMethod>,
    policies: Vec<String>,
    channels: Vec<(String, f64)>,
    combined: f64,
    win: Option<WinStats>,
    style: Option<StyleStats>,
    fallbacks: u64,
}

struct Evaluator<'a> {
    env: EnvSpec,
    episodes: usize,
    seed: u64,
    opponent: Arc<dyn Controller>,
    scorers: Vec<&'a dyn StepScorer>,
}

/// Per-channel means, the headline return, win and style statistics.
type Evaluation = (Vec<(String, f64)>, f64, Option<WinStats>, Option<StyleStats>);

impl Evaluator<'_> {
    fn run(&self, agent: &dyn Controller) -> Result<Evaluation, HarnessError> {
        match self.env.kind {
            EnvKind::CollectWorld => {
                let s = evaluate_rewards(agent, self.opponent.as_ref(), &self.env, self.episodes, self.seed)?;
                let chans = [Channel::R0Red, Channel::R1Green];
                let channels = chans.iter().map(|c| (c.name().to_string(), s.mean.get(*c))).collect();
                Ok((channels, s.mean_of(&chans), None, None))
            }
            EnvKind::ArenaWorld => {
                let eps = run_scored_episodes(
                    agent,
                    self.opponent.as_ref(),
                    &self.env,
                    self.episodes,
                    self.seed,
                    &self.scorers,
                )?;
                let summaries: Vec<_> = eps.iter().map(|e| e.summary).collect();
                let n = eps.len() as f64;
                let r0 = summaries.iter().map(|e| e.rewards.get(Channel::R0Env)).sum::<f64>() / n;
                let mut channels = vec![(Channel::R0Env.name().to_string(), r0)];
                for (k, s) in self.scorers.iter().enumerate() {
                    channels.push((s.name().to_string(), eps.iter().map(|e| e.scores[k]).sum::<f64>() / n));
                }
                Ok((
                    channels,
                    r0,
                    Some(WinStats::from_episodes(&summaries)),
                    Some(StyleStats::from_episodes(&summaries)),
                ))
            }
        }
    }

    fn single(&self, id: &str, policy: &Arc<TrainedPolicy>) -> Result<Raw, HarnessError> {
        let (channels, combined, win, style) = self.run(policy.as_ref())?;
        Ok(Raw {
            id: id.to_string(),
            method: None,
            policies: vec![id.to_string()],
            channels,
            combined,
            win,
            style,
            fallbacks: 0,
        })
    }

    fn fused(&self, method: FusionMethod, epsilon: f64, main: &Member, subs: &[&Member]) -> Result<Raw, HarnessError> {
        let ensemble = FusionEnsemble::new(
            main.policy.clone(),
            subs.iter().map(|m| m.policy.clone()).collect(),
            method,
            epsilon,
        )?;
        let (channels, combined, win, style) = self.run(&ensemble)?;
        let mut policies = vec![main.name.clone()];
        policies.extend(subs.iter().map(|m| m.name.clone()));
        Ok(Raw {
            id: format!("{}:{}", method.short_name().to_lowercase(), policies.join("+")),
            method: Some(method),
            policies,
            channels,
            combined,
            win,
            style,
            fallbacks: ensemble.fallback_count(),
        })
    }
}

/// Trains or loads everything `spec` needs, evaluates every configuration
/// and returns the report with the wall-clock ledger.
pub fn run_use_case(spec: &ExperimentSpec) -> Result<(MetricsReport, TrainingLedger), HarnessError> {
    spec.validate()?;
    let mut runner = Runner::new(spec);
    let env = spec.env();
    let budget = &spec.budget;
    let eval_seed = rng::derive_seed(spec.seed, &[label::EVAL]);

    let mut members: Vec<Member> = Vec::new();
    let mut specialists: Vec<(String, String)> = Vec::new();
    let mut plans: Vec<Vec<usize>> = Vec::new();
    let mut baselines: Vec<(Baseline, Arc<TrainedPolicy>)> = Vec::new();
    let opponent: Arc<dyn Controller>;
    let opponent_name: String;
    let main_role: String;

    match spec.use_case {
        UseCase::MiniworldAnalog => {
            let arch = Architecture::Tabular { states: COLLECT_STATES };
            let red = ChannelReward::single(Channel::R0Red);
            let green = ChannelReward::single(Channel::R1Green);
            let both = ChannelReward(vec![Channel::R0Red, Channel::R1Green]);
            main_role = "collect-red".into();
            let p0 = runner.ppo_job(&main_role, env, arch.clone(), &red, budget.collect.clone())?;
            let p1 = runner.ppo_job("collect-green", env, arch.clone(), &green, budget.collect.clone())?;
            for (name, t, ch) in [("red", &p0, Channel::R0Red), ("green", &p1, Channel::R1Green)] {
                members.push(Member {
                    name: name.into(),
                    policy: Arc::new(t.policy(env.kind)?),
                    channel: None,
                });
                specialists.push((ch.name().into(), name.into()));
            }
            plans.push(vec![1]);
            for b in &spec.baselines {
                let t = match b {
                    Baseline::FromScratch => {
                        runner.ppo_job("collect-scratch", env, arch.clone(), &both, budget.collect.clone())
                    }
                    Baseline::FineTune => {
                        runner.fine_tune_job("collect-fine-tune", &p0.checkpoint, env, &both, budget.collect.clone())
                    }
                };
                match t.and_then(|t| t.policy(env.kind)) {
                    Ok(p) => baselines.push((*b, Arc::new(p))),
                    Err(e) => runner.fail(b.id(), e),
                }
            }
            opponent = Arc::new(ExpertKind::RandomOpponent);
            opponent_name = ExpertKind::RandomOpponent.to_string();
        }
        UseCase::Enhance | UseCase::Style | UseCase::Adapt => {
            let arch = Architecture::mlp(ARENA_FEATURES, &budget.arena_hidden);
            let r0 = ChannelReward::single(Channel::R0Env);
            // Adapt starts from the agent trained before the change.
            let main_env = match spec.use_case {
                UseCase::Adapt => EnvSpec::arena(FeatureSet::NONE),
                _ => env,
            };
            main_role = format!("arena-main-{}", flag_tag(main_env.flags));
            let main = runner.ppo_job(&main_role, main_env, arch.clone(), &r0, budget.arena.clone())?;
            let main_policy = Arc::new(main.policy(EnvKind::ArenaWorld)?);
            members.push(Member {
                name: "main".into(),
                policy: main_policy.clone(),
                channel: None,
            });
            specialists.push((Channel::R0Env.name().into(), "main".into()));

            let subs: Vec<(ExpertKind, EnvSpec)> = match spec.use_case {
                UseCase::Enhance => vec![(ExpertKind::OrbUser, env), (ExpertKind::LootCollector, env)],
                UseCase::Style => [ExpertKind::Warrior, ExpertKind::Archer, ExpertKind::LootAvoider]
                    .into_iter()
                    .map(|e| (e, env))
                    .collect(),
                _ => {
                    let mut v = Vec::new();
                    if env.flags.orb {
                        v.push((ExpertKind::OrbUser, EnvSpec::arena(FeatureSet::ORB)));
                    }
                    if env.flags.death_tile {
                        v.push((ExpertKind::HazardAvoider, env));
                    }
                    v
                }
            };
            for (expert, sub_env) in subs {
                match runner.sub_job(expert, sub_env) {
                    Ok(mut m) => {
                        let k = members.len();
                        let name = format!("R{k}_{}", m.name);
                        if let Some(c) = m.channel.as_mut() {
                            c.name = name.clone();
                        }
                        specialists.push((name, m.name.clone()));
                        members.push(m);
                    }
                    Err(e) => runner.fail(&format!("sub-policy {expert}"), e),
                }
            }
            let sub_idx: Vec<usize> = (1..members.len()).collect();
            plans.extend(sub_idx.iter().map(|&k| vec![k]));
            if spec.use_case != UseCase::Style && sub_idx.len() > 1 {
                plans.push(sub_idx.clone());
            }

            let tag = flag_tag(env.flags);
            let prefix = if spec.use_case == UseCase::Enhance { "enhance" } else { "arena" };
            let reward: Box<dyn RewardFunction> = if spec.use_case == UseCase::Enhance {
                Box::new(CombinedReward {
                    base: r0,
                    learned: members
                        .iter()
                        .filter_map(|m| m.channel.as_ref())
                        .map(|c| LearnedReward::new(c.discriminator.clone(), budget.airl.sigma))
                        .collect(),
                })
            } else {
                Box::new(r0)
            };
            for b in &spec.baselines {
                let t = match b {
                    Baseline::FromScratch => runner.ppo_job(
                        &format!("{prefix}-scratch-{tag}"),
                        env,
                        arch.clone(),
                        reward.as_ref(),
                        budget.arena.clone(),
                    ),
                    Baseline::FineTune => runner.fine_tune_job(
                        &format!("{prefix}-fine-tune-{tag}"),
                        &main.checkpoint,
                        env,
                        reward.as_ref(),
                        PpoConfig {
                            iterations: budget.finetune_iterations,
                            ..budget.arena.clone()
                        },
                    ),
                };
                match t.and_then(|t| t.policy(EnvKind::ArenaWorld)) {
                    Ok(p) => baselines.push((*b, Arc::new(p))),
                    Err(e) => runner.fail(b.id(), e),
                }
            }
            opponent = main_policy;
            opponent_name = "main".into();
        }
    }

    let evaluator = Evaluator {
        env,
        episodes: spec.episodes,
        seed: eval_seed,
        opponent,
        scorers: members
            .iter()
            .filter_map(|m| m.channel.as_ref().map(|c| c as &dyn StepScorer))
            .collect(),
    };

    let mut member_raw = Vec::new();
    for m in &members {
        match evaluator.single(&m.name, &m.policy) {
            Ok(r) => member_raw.push(r),
            Err(e) => runner.fail(&m.name, e),
        }
    }
    let mut config_raw = Vec::new();
    for &method in &spec.methods {
        for plan in &plans {
            let subs: Vec<&Member> = plan.iter().map(|&k| &members[k]).collect();
            match evaluator.fused(method, spec.epsilon, &members[0], &subs) {
                Ok(r) => config_raw.push(r),
                Err(e) => runner.fail(&format!("{method} fusion"), e),
            }
        }
    }
    for (b, p) in &baselines {
        match evaluator.single(b.id(), p) {
            Ok(r) => config_raw.push(r),
            Err(e) => runner.fail(b.id(), e),
        }
    }

    let normalizers: Vec<Normalizer> = specialists
        .iter()
        .map(|(channel, who)| {
            let value = member_raw
                .iter()
                .find(|r| &r.id == who)
                .and_then(|r| r.channels.iter().find(|(c, _)| c == channel))
                .map_or(0.0, |(_, v)| *v);
            Normalizer {
                channel: channel.clone(),
                specialist: who.clone(),
                value,
                degenerate: value.is_nan() || value <= 0.0,
            }
        })
        .collect();

    let finish = |r: Raw| -> ConfigResult {
        let channels = r
            .channels
            .iter()
            .map(|(c, mean)| ChannelResult {
                channel: c.clone(),
                mean: *mean,
                normalized: normalize_rewards(&[(c.clone(), *mean)], &normalizers)
                    .ok()
                    .map(|v| v[0].1),
            })
            .collect();
        ConfigResult {
            id: r.id,
            method: r.method,
            epsilon: if r.method.is_some() { spec.epsilon } else { 0.0 },
            policies: r.policies,
            channels,
            combined: r.combined,
            win: r.win,
            style: r.style,
            episodes: spec.episodes,
            seed: eval_seed,
            fallbacks: r.fallbacks,
        }
    };
    let members_out: Vec<ConfigResult> = member_raw.into_iter().map(finish).collect();
    let configurations: Vec<ConfigResult> = config_raw.into_iter().map(finish).collect();

    let main_steps = runner.jobs.iter().find(|j| j.role == main_role).map(|j| j.env_steps);
    let sub_steps = runner
        .jobs
        .iter()
        .filter(|j| j.kind == JobKind::DeAirl || j.role == "collect-green")
        .map(|j| j.env_steps)
        .max();
    let cost_ratio = match (sub_steps, main_steps) {
        (Some(s), Some(m)) if m > 0 => Some(s as f64 / m as f64),
        _ => None,
    };

    // Where checkpoints were cached does not change the results.
    let report = MetricsReport {
        spec: ExperimentSpec {
            checkpoints: None,
            ..spec.clone()
        },
        env,
        action_selection: "sample".into(),
        opponent: opponent_name,
        normalizers,
        members: members_out,
        configurations,
        training: runner.jobs,
        cost_ratio,
        partial: !runner.failures.is_empty(),
        failures: runner.failures,
    };
    Ok((report, TrainingLedger { entries: runner.ledger }))
}
