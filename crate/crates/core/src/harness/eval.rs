//! Seeded evaluation episodes and the statistics computed from them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::control::Controller;
use crate::gridworld::{Channel, EnvKind, EnvSpec, Events, GridState, LevelSpec, Outcome, RewardVector, StepMode};
use crate::rng::{self, label, Rng};
use crate::trainer::{EpisodeSummary, TrainerError};

/// Reward channel computed from a transition rather than by the
/// environment, such as a learned reward.
pub trait StepScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, before: &GridState, action: usize, after: &GridState) -> f64;
}

/// Plays one episode with `agent` in the agent seat and `opponent` (arena
/// only) in the other.
pub fn play_episode(
    agent: &dyn Controller,
    opponent: &dyn Controller,
    level: &LevelSpec,
    spec: &EnvSpec,
    mode: StepMode,
    rng: &mut Rng,
) -> Result<EpisodeSummary, TrainerError> {
    Ok(play_scored_episode(agent, opponent, level, spec, mode, rng, &[])?.summary)
}

/// Episode totals plus one sum per scorer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredEpisode {
    pub summary: EpisodeSummary,
    pub scores: Vec<f64>,
}

pub fn play_scored_episode(
    agent: &dyn Controller,
    opponent: &dyn Controller,
    level: &LevelSpec,
    spec: &EnvSpec,
    mode: StepMode,
    rng: &mut Rng,
    scorers: &[&dyn StepScorer],
) -> Result<ScoredEpisode, TrainerError> {
    let mut state = GridState::reset(level, spec.step_cap);
    let mut out = ScoredEpisode {
        summary: EpisodeSummary::default(),
        scores: vec![0.0; scorers.len()],
    };
    while !state.done {
        let a = agent.act(&state, rng)?;
        let b = match state.kind {
            EnvKind::ArenaWorld => Some(opponent.act(&state.swapped(), rng)?),
            EnvKind::CollectWorld => None,
        };
        let before = (!scorers.is_empty()).then(|| state.clone());
        let res = state.step(a, b, mode)?;
        if let Some(before) = before {
            for (sum, s) in out.scores.iter_mut().zip(scorers) {
                *sum += s.score(&before, a, &state);
            }
        }
        out.summary.rewards.accumulate(&res.rewards);
        out.summary.events.accumulate(&res.events);
        out.summary.length += 1;
    }
    out.summary.outcome = state.outcome;
    Ok(out)
}

/// Level played in evaluation episode `i` under `seed`.
pub fn eval_level(spec: &EnvSpec, seed: u64, i: u64) -> Result<LevelSpec, HarnessError> {
    Ok(spec.level(rng::derive_seed(seed, &[label::EVAL, label::LEVEL, i]))?)
}

/// `episodes` seeded terminal-mode episodes. Each episode owns its level and
/// rng stream, so the result is independent of scheduling.
pub fn run_episodes(
    agent: &dyn Controller,
    opponent: &dyn Controller,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeSummary>, HarnessError> {
    Ok(run_scored_episodes(agent, opponent, spec, episodes, seed, &[])?
        .into_iter()
        .map(|e| e.summary)
        .collect())
}

pub fn run_scored_episodes(
    agent: &dyn Controller,
    opponent: &dyn Controller,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    scorers: &[&dyn StepScorer],
) -> Result<Vec<ScoredEpisode>, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::InvalidSpec("episode count must be at least 1".into()));
    }
    (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let level = eval_level(spec, seed, i)?;
            let mut r = rng::stream(seed, &[label::EVAL, i]);
            Ok(play_scored_episode(agent, opponent, &level, spec, StepMode::Terminal, &mut r, scorers)?)
        })
        .collect()
}

/// Mean and raw sum per channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ChannelStats {
    pub mean: RewardVector,
    pub sum: RewardVector,
    pub episodes: usize,
}

impl ChannelStats {
    pub fn from_episodes(eps: &[EpisodeSummary]) -> Self {
        let mut sum = RewardVector::default();
        for e in eps {
            sum.accumulate(&e.rewards);
        }
        let n = eps.len().max(1) as f64;
        let mut mean = RewardVector::default();
        for c in [Channel::R0Red, Channel::R1Green, Channel::R0Env] {
            mean.add(c, sum.get(c) / n);
        }
        Self {
            mean,
            sum,
            episodes: eps.len(),
        }
    }

    pub fn mean_of(&self, channels: &[Channel]) -> f64 {
        channels.iter().map(|&c| self.mean.get(c)).sum()
    }
}

/// Mean reward per channel over seeded episodes.
pub fn evaluate_rewards(
    agent: &dyn Controller,
    opponent: &dyn Controller,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<ChannelStats, HarnessError> {
    Ok(ChannelStats::from_episodes(&run_episodes(agent, opponent, spec, episodes, seed)?))
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct WinStats {
    pub wins: usize,
    pub losses: usize,
    pub draws: usize,
    pub episodes: usize,
    /// Draws count as non-wins.
    pub win_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl WinStats {
    pub fn from_episodes(eps: &[EpisodeSummary]) -> Self {
        let count = |o| eps.iter().filter(|e| e.outcome == Some(o)).count();
        let (wins, losses, draws) = (count(Outcome::Win), count(Outcome::Loss), count(Outcome::Draw));
        let (ci_low, ci_high) = wilson_interval(wins, eps.len(), Z_95);
        Self {
            wins,
            losses,
            draws,
            episodes: eps.len(),
            win_rate: wins as f64 / eps.len().max(1) as f64,
            ci_low,
            ci_high,
        }
    }

    pub fn loss_rate(&self) -> f64 {
        self.losses as f64 / self.episodes.max(1) as f64
    }

    pub fn draw_rate(&self) -> f64 {
        self.draws as f64 / self.episodes.max(1) as f64
    }

    pub fn excludes_half(&self) -> bool {
        self.ci_low > 0.5 || self.ci_high < 0.5
    }
}

/// Head-to-head: `agent` in the agent seat against `opponent`.
pub fn head_to_head(
    agent: &dyn Controller,
    opponent: &dyn Controller,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<WinStats, HarnessError> {
    if spec.kind != EnvKind::ArenaWorld {
        return Err(HarnessError::InvalidSpec("head-to-head needs the arena".into()));
    }
    Ok(WinStats::from_episodes(&run_episodes(agent, opponent, spec, episodes, seed)?))
}

/// Per-episode means of behavioral counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StyleStats {
    pub melee: f64,
    pub ranged: f64,
    pub loot: f64,
    pub orb: f64,
    pub death_tile: f64,
    /// Melee over all attacks (0 when there were none).
    pub melee_share: f64,
    pub ranged_share: f64,
    pub episodes: usize,
}

impl StyleStats {
    pub fn from_episodes(eps: &[EpisodeSummary]) -> Self {
        let mut e = Events::default();
        for ep in eps {
            e.accumulate(&ep.events);
        }
        let n = eps.len().max(1) as f64;
        let attacks = (e.melee + e.ranged) as f64;
        let share = |x: u32| if attacks > 0.0 { x as f64 / attacks } else { 0.0 };
        Self {
            melee: e.melee as f64 / n,
            ranged: e.ranged as f64 / n,
            loot: e.loot as f64 / n,
            orb: e.orb as f64 / n,
            death_tile: e.death_tile as f64 / n,
            melee_share: share(e.melee),
            ranged_share: share(e.ranged),
            episodes: eps.len(),
        }
    }
}

pub fn style_stats(
    agent: &dyn Controller,
    opponent: &dyn Controller,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<StyleStats, HarnessError> {
    Ok(StyleStats::from_episodes(&run_episodes(agent, opponent, spec, episodes, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{ExpertKind, FeatureSet};

    #[test]
    fn wilson_matches_closed_form() {
        // Oracle: p=0.5, n=100 gives 0.5 +- z*sqrt(0.25/100 + z^2/40000)/(1+z^2/100).
        let (lo, hi) = wilson_interval(50, 100, Z_95);
        let z = Z_95;
        let half = z * (0.0025 + z * z / 40000.0).sqrt() / (1.0 + z * z / 100.0);
        assert!((lo - (0.5 - half)).abs() < 1e-12);
        assert!((hi - (0.5 + half)).abs() < 1e-12);
    }

    #[test]
    fn rates_sum_to_one() {
        let spec = EnvSpec::arena(FeatureSet::NONE);
        let w = head_to_head(&ExpertKind::RandomOpponent, &ExpertKind::RandomOpponent, &spec, 50, 3).unwrap();
        assert_eq!(w.wins + w.losses + w.draws, w.episodes);
        assert_eq!(w.win_rate + w.loss_rate() + w.draw_rate(), 1.0);
    }

    #[test]
    fn single_episode_means_equal_sums() {
        let spec = EnvSpec::collect();
        let s = evaluate_rewards(&ExpertKind::RedCollector, &ExpertKind::RandomOpponent, &spec, 1, 5).unwrap();
        assert_eq!(s.mean, s.sum);
    }

    #[test]
    fn archer_never_melees_and_avoider_never_loots() {
        let spec = EnvSpec::arena(FeatureSet::NONE);
        let a = style_stats(&ExpertKind::Archer, &ExpertKind::RandomOpponent, &spec, 100, 1).unwrap();
        assert_eq!(a.melee, 0.0);
        let l = style_stats(&ExpertKind::LootAvoider, &ExpertKind::RandomOpponent, &spec, 100, 1).unwrap();
        assert_eq!(l.loot, 0.0);
    }
}
