//! Expert demonstrations on SeedEnv levels, stored as line-delimited JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IrlError;
use crate::control::Controller;
use crate::gridworld::{encode, EnvSpec, ExpertKind, FeatureSet, GridError, GridState, Observation, RewardVector, StepMode};
use crate::persist::{self, PersistError};
use crate::rng::{self, label};

pub const DEMO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub rewards: RewardVector,
    pub next_obs: Observation,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DemoHeader {
    pub format_version: u32,
    pub expert: ExpertKind,
    pub env: EnvSpec,
    pub horizon: usize,
    /// Generation seed of each SeedEnv level, in trajectory order.
    pub level_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub header: DemoHeader,
    pub trajectories: Vec<Vec<Transition>>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct Line {
    trajectory: usize,
    #[serde(flatten)]
    transition: Transition,
}

/// One fixed-horizon trajectory of `expert` per SeedEnv level.
pub fn collect_demos(
    spec: &EnvSpec,
    expert: ExpertKind,
    n: usize,
    horizon: usize,
    master_seed: u64,
) -> Result<DemoSet, IrlError> {
    if !expert.compatible(spec.kind) {
        return Err(GridError::IncompatibleExpert {
            expert,
            kind: spec.kind,
        }
        .into());
    }
    let opponent = ExpertKind::RandomOpponent;
    let mut level_seeds = Vec::with_capacity(n);
    let mut trajectories = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let seed = rng::derive_seed(master_seed, &[label::SEED_ENV, i]);
        let level = spec.level(seed)?;
        let mut r = rng::stream(master_seed, &[label::EXPERT, i]);
        let mut state = GridState::reset(&level, spec.step_cap);
        let mut traj = Vec::with_capacity(horizon);
        while !state.done {
            let obs = encode(&state, FeatureSet::ALL);
            let a = expert.act(&state, &mut r)?;
            let b = match spec.kind {
                crate::gridworld::EnvKind::ArenaWorld => Some(opponent.act(&state.swapped(), &mut r)?),
                crate::gridworld::EnvKind::CollectWorld => None,
            };
            let res = state.step(a, b, StepMode::FixedHorizon(horizon))?;
            traj.push(Transition {
                obs,
                action: a,
                rewards: res.rewards,
                next_obs: encode(&state, FeatureSet::ALL),
                done: res.done,
            });
        }
        level_seeds.push(seed);
        trajectories.push(traj);
    }
    let set = DemoSet {
        header: DemoHeader {
            format_version: DEMO_FORMAT_VERSION,
            expert,
            env: *spec,
            horizon,
            level_seeds,
        },
        trajectories,
    };
    set.validate()?;
    Ok(set)
}

impl DemoSet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flatten()
    }

    pub fn validate(&self) -> Result<(), IrlError> {
        let h = &self.header;
        if self.trajectories.len() != h.level_seeds.len() {
            return Err(IrlError::BadDemos(format!(
                "{} trajectories for {} levels",
                self.trajectories.len(),
                h.level_seeds.len()
            )));
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.len() != h.horizon {
                return Err(IrlError::BadDemos(format!("trajectory {i} has {} steps, expected {}", t.len(), h.horizon)));
            }
        }
        Ok(())
    }

    /// Header line followed by one line per transition.
    pub fn to_jsonl(&self) -> Result<String, IrlError> {
        let mut out = serde_json::to_string(&self.header).map_err(PersistError::from)?;
        out.push('\n');
        for (i, traj) in self.trajectories.iter().enumerate() {
            for t in traj {
                let line = Line {
                    trajectory: i,
                    transition: t.clone(),
                };
                out.push_str(&serde_json::to_string(&line).map_err(PersistError::from)?);
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn from_jsonl(path: &Path, text: &str) -> Result<Self, IrlError> {
        let corrupt = |detail: String| {
            IrlError::Persist(PersistError::CorruptFile {
                path: path.to_path_buf(),
                detail,
            })
        };
        let mut lines = text.lines();
        let header: DemoHeader = serde_json::from_str(lines.next().unwrap_or(""))
            .map_err(|e| corrupt(format!("bad header: {e}")))?;
        if header.format_version != DEMO_FORMAT_VERSION {
            return Err(PersistError::VersionMismatch {
                path: path.to_path_buf(),
                found: header.format_version,
                expected: DEMO_FORMAT_VERSION,
            }
            .into());
        }
        let mut trajectories = vec![Vec::new(); header.level_seeds.len()];
        for (k, l) in lines.enumerate() {
            let line: Line = serde_json::from_str(l).map_err(|e| corrupt(format!("line {}: {e}", k + 2)))?;
            trajectories
                .get_mut(line.trajectory)
                .ok_or_else(|| corrupt(format!("line {}: unknown trajectory {}", k + 2, line.trajectory)))?
                .push(line.transition);
        }
        let set = DemoSet { header, trajectories };
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), IrlError> {
        Ok(persist::write_atomic(path, self.to_jsonl()?.as_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, IrlError> {
        let text = std::fs::read_to_string(path).map_err(|source| PersistError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_jsonl(path, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_fixed_length_trajectory_per_level() {
        for (spec, t) in [(EnvSpec::collect(), 50), (EnvSpec::arena(FeatureSet::ALL), 100)] {
            let expert = if spec.kind == crate::gridworld::EnvKind::CollectWorld {
                ExpertKind::GreenCollector
            } else {
                ExpertKind::HazardAvoider
            };
            let d = collect_demos(&spec, expert, 10, t, 4).unwrap();
            assert_eq!(d.len(), 10);
            assert!(d.trajectories.iter().all(|x| x.len() == t));
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let d = collect_demos(&EnvSpec::collect(), ExpertKind::GreenCollector, 3, 50, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("demos.jsonl");
        d.save(&p).unwrap();
        assert_eq!(DemoSet::load(&p).unwrap(), d);
        let text = std::fs::read_to_string(&p).unwrap();
        let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(DemoSet::from_jsonl(&p, &cut), Err(IrlError::BadDemos(_))));
    }

    #[test]
    fn incompatible_expert() {
        let r = collect_demos(&EnvSpec::collect(), ExpertKind::Warrior, 1, 50, 1);
        assert!(matches!(r, Err(IrlError::Grid(GridError::IncompatibleExpert { .. }))));
    }
}
