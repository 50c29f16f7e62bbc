use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{PolicyParams, ValueParams};
use super::TrainerError;
use crate::control::{check_descriptor, Controller};
use crate::fusion::{sample_action, ActionDistribution};
use crate::gridworld::{
    encode, EnvKind, EnvSpec, Events, ExpertKind, FeatureSet, GridState, LevelSource, Observation,
    Outcome, RewardVector, StepMode, StepResult,
};
use crate::rng::{self, label, Rng};

/// Environment as seen by a learner: level source, episode mode, what the
/// learner can observe, and who sits in the opponent seat.
#[derive(Clone)]
pub struct RolloutEnv {
    pub spec: EnvSpec,
    pub levels: LevelSource,
    pub mode: StepMode,
    pub known: FeatureSet,
    pub opponent: Arc<dyn Controller>,
}

impl std::fmt::Debug for RolloutEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RolloutEnv")
            .field("spec", &self.spec)
            .field("mode", &self.mode)
            .field("known", &self.known)
            .finish()
    }
}

impl RolloutEnv {
    /// Terminal-mode procedural levels, random opponent, full observation.
    pub fn procedural(spec: EnvSpec, master_seed: u64) -> Result<Self, TrainerError> {
        Ok(Self {
            spec,
            levels: LevelSource::procedural(spec, master_seed)?,
            mode: StepMode::Terminal,
            known: FeatureSet::ALL,
            opponent: Arc::new(ExpertKind::RandomOpponent),
        })
    }

    pub fn with_mode(mut self, mode: StepMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_known(mut self, known: FeatureSet) -> Self {
        self.known = known;
        self
    }

    pub fn with_levels(mut self, levels: LevelSource) -> Self {
        self.levels = levels;
        self
    }

    pub fn with_opponent(mut self, opponent: Arc<dyn Controller>) -> Self {
        self.opponent = opponent;
        self
    }

    pub fn kind(&self) -> EnvKind {
        self.spec.kind
    }

    pub fn reset(&self, episode: u64) -> GridState {
        GridState::reset(&self.levels.level(episode), self.spec.step_cap)
    }

    pub fn observe(&self, state: &GridState) -> Observation {
        encode(state, self.known)
    }

    /// Advances `state`, querying the opponent seat when there is one.
    pub fn step(&self, state: &mut GridState, action: usize, rng: &mut Rng) -> Result<StepResult, TrainerError> {
        let opponent = match state.kind {
            EnvKind::ArenaWorld => Some(self.opponent.act(&state.swapped(), rng)?),
            EnvKind::CollectWorld => None,
        };
        Ok(state.step(action, opponent, self.mode)?)
    }

    /// Whether a finished state ended for real (no bootstrap) rather than by
    /// truncation.
    pub fn is_terminal(&self, state: &GridState) -> bool {
        if !state.done || matches!(self.mode, StepMode::FixedHorizon(_)) {
            return false;
        }
        match state.kind {
            EnvKind::CollectWorld => state.objects.is_empty(),
            EnvKind::ArenaWorld => matches!(state.outcome, Some(Outcome::Win | Outcome::Loss)),
        }
    }

    pub fn check_policy(&self, policy: &PolicyParams) -> Result<(), TrainerError> {
        check_descriptor(policy.arch(), policy.num_actions(), self.kind())
    }
}

/// One stored transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Observation,
    pub next_obs: Observation,
    pub action: usize,
    /// Log-probability of `action` under the snapshot that acted.
    pub logp: f64,
    pub value: f64,
    /// Value of `next_obs` (meaningless when `terminal`).
    pub next_value: f64,
    pub rewards: RewardVector,
    pub terminal: bool,
    /// Episode or rollout boundary after this step.
    pub end: bool,
    pub events: Events,
}

/// Totals of one completed episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub rewards: RewardVector,
    pub events: Events,
    pub length: usize,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBatch {
    pub steps: Vec<Step>,
    pub episodes: Vec<EpisodeSummary>,
    /// Filled by [`TrajectoryBatch::compute_advantages`].
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn compute_advantages(&mut self, rewards: &[f64], gamma: f64, lambda: f64) {
        let values: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        let next: Vec<f64> = self.steps.iter().map(|s| s.next_value).collect();
        let terminal: Vec<bool> = self.steps.iter().map(|s| s.terminal).collect();
        let end: Vec<bool> = self.steps.iter().map(|s| s.end).collect();
        let (adv, ret) = super::compute_gae(rewards, &values, &next, &terminal, &end, gamma, lambda);
        self.advantages = adv;
        self.returns = ret;
    }
}

/// A persistent environment slot: episodes continue across iterations.
#[derive(Debug, Clone)]
pub struct Lane {
    index: u64,
    stride: u64,
    episode: u64,
    state: GridState,
    totals: EpisodeSummary,
}

impl Lane {
    /// Lane `index` of `count` plays episodes `index`, `index + count`, ...
    pub fn new(env: &RolloutEnv, index: usize, count: usize) -> Self {
        let episode = index as u64;
        Self {
            index: index as u64,
            stride: count as u64,
            episode,
            state: env.reset(episode),
            totals: EpisodeSummary::default(),
        }
    }

    pub fn lanes(env: &RolloutEnv, count: usize) -> Vec<Lane> {
        (0..count).map(|i| Lane::new(env, i, count)).collect()
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    fn run(
        &mut self,
        policy: &PolicyParams,
        value: &ValueParams,
        env: &RolloutEnv,
        count: usize,
        rng: &mut Rng,
    ) -> Result<(Vec<Step>, Vec<EpisodeSummary>), TrainerError> {
        let mut steps = Vec::with_capacity(count);
        let mut episodes = Vec::new();
        let mut obs = env.observe(&self.state);
        for t in 0..count {
            let logits = policy.logits(&obs)?;
            let logp_all = super::log_softmax(&logits);
            let dist = ActionDistribution::softmax(&logits)?;
            let action = sample_action(&dist, rng);
            let v = value.value(&obs)?;
            let res = env.step(&mut self.state, action, rng)?;
            let next_obs = env.observe(&self.state);
            self.totals.rewards.accumulate(&res.rewards);
            self.totals.events.accumulate(&res.events);
            self.totals.length += 1;
            let terminal = env.is_terminal(&self.state);
            let done = self.state.done;
            let last = t + 1 == count;
            let next_value = if terminal {
                0.0
            } else if done || last {
                value.value(&next_obs)?
            } else {
                f64::NAN
            };
            steps.push(Step {
                obs,
                next_obs: next_obs.clone(),
                action,
                logp: logp_all[action],
                value: v,
                next_value,
                rewards: res.rewards,
                terminal,
                end: done || last,
                events: res.events,
            });
            if done {
                self.totals.outcome = self.state.outcome;
                episodes.push(std::mem::take(&mut self.totals));
                self.episode += self.stride;
                self.state = env.reset(self.episode);
                obs = env.observe(&self.state);
            } else {
                obs = next_obs;
            }
        }
        // Inside an episode the next value is the next step's own estimate.
        for t in 0..steps.len().saturating_sub(1) {
            if !steps[t].end {
                steps[t].next_value = steps[t + 1].value;
            }
        }
        Ok((steps, episodes))
    }
}

/// Collects `steps_per_lane` transitions from every lane with the frozen
/// `policy` snapshot. Lane `i` draws from its own stream derived from
/// (`seed`, `iteration`, `i`), so results do not depend on scheduling.
pub fn collect_rollouts(
    policy: &PolicyParams,
    value: &ValueParams,
    env: &RolloutEnv,
    lanes: &mut [Lane],
    steps_per_lane: usize,
    seed: u64,
    iteration: u64,
) -> Result<TrajectoryBatch, TrainerError> {
    env.check_policy(policy)?;
    let parts: Vec<_> = lanes
        .par_iter_mut()
        .map(|lane| {
            let mut rng = rng::stream(seed, &[label::ROLLOUT, iteration, lane.index]);
            lane.run(policy, value, env, steps_per_lane, &mut rng)
        })
        .collect();
    let mut batch = TrajectoryBatch::default();
    for part in parts {
        let (steps, episodes) = part?;
        batch.steps.extend(steps);
        batch.episodes.extend(episodes);
    }
    Ok(batch)
}
