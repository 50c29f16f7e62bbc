//! Procedural gridworlds.
//!
//! `CollectWorld` is a single open room where the agent picks up red boxes
//! and green balls. `ArenaWorld` is a small roguelike duel: two actors, walls,
//! loot, and two optional design-change features (an orb that boosts attack
//! and instant-death tiles).

mod dynamics;
mod experts;
mod level;
mod observe;
pub mod path;

pub use dynamics::{
    Actor, Channel, Events, GridState, Outcome, RewardVector, Role, StepMode, StepResult,
    ARENA_DEFAULT_CAP, COLLECT_DEFAULT_CAP, MELEE_DAMAGE, ORB_BONUS, RANGED_DAMAGE, RANGED_RANGE,
};
pub use experts::{scripted_action, ExpertKind};
pub use level::{
    build_seed_env, generate_level, LevelSource, LevelSpec, ObjectKind, Placement,
    LEVEL_FORMAT_VERSION,
};
pub use observe::{
    encode, mask_observation, Observation, ARENA_FEATURES, ARENA_STATES, COLLECT_FEATURES,
    COLLECT_STATES,
};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid size {0} is below the minimum of 5")]
    GridTooSmall(usize),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("action {action} out of range for {kind} ({actions} actions)")]
    InvalidAction {
        kind: EnvKind,
        action: usize,
        actions: usize,
    },
    #[error("expert {expert} cannot act in {kind}")]
    IncompatibleExpert { expert: ExpertKind, kind: EnvKind },
    #[error("arena step needs an opponent action")]
    MissingOpponentAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    #[serde(alias = "collect")]
    CollectWorld,
    #[serde(alias = "arena")]
    ArenaWorld,
}

impl EnvKind {
    pub fn num_actions(self) -> usize {
        match self {
            EnvKind::CollectWorld => 5,
            EnvKind::ArenaWorld => 10,
        }
    }

    pub fn default_grid_size(self) -> usize {
        match self {
            EnvKind::CollectWorld => 8,
            EnvKind::ArenaWorld => 10,
        }
    }

    /// Horizon used for demonstrations and reward learning.
    pub fn fixed_horizon(self) -> usize {
        match self {
            EnvKind::CollectWorld => 50,
            EnvKind::ArenaWorld => 100,
        }
    }

    pub fn channels(self) -> &'static [Channel] {
        match self {
            EnvKind::CollectWorld => &[Channel::R0Red, Channel::R1Green],
            EnvKind::ArenaWorld => &[Channel::R0Env],
        }
    }

    pub fn feature_dim(self) -> usize {
        match self {
            EnvKind::CollectWorld => COLLECT_FEATURES,
            EnvKind::ArenaWorld => ARENA_FEATURES,
        }
    }

    pub fn state_count(self) -> usize {
        match self {
            EnvKind::CollectWorld => COLLECT_STATES,
            EnvKind::ArenaWorld => ARENA_STATES,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::CollectWorld => "collect-world",
            EnvKind::ArenaWorld => "arena-world",
        })
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "collect" | "collect-world" | "miniworld" => Ok(EnvKind::CollectWorld),
            "arena" | "arena-world" | "deepcrawl" => Ok(EnvKind::ArenaWorld),
            other => Err(format!("unknown environment `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    Orb,
    DeathTile,
}

/// Which design-change features exist (in a level) or are known (to an observer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FeatureSet {
    pub orb: bool,
    pub death_tile: bool,
}

impl FeatureSet {
    pub const NONE: FeatureSet = FeatureSet {
        orb: false,
        death_tile: false,
    };
    pub const ALL: FeatureSet = FeatureSet {
        orb: true,
        death_tile: true,
    };
    pub const ORB: FeatureSet = FeatureSet {
        orb: true,
        death_tile: false,
    };
    pub const DEATH_TILE: FeatureSet = FeatureSet {
        orb: false,
        death_tile: true,
    };

    pub fn intersect(self, other: FeatureSet) -> FeatureSet {
        FeatureSet {
            orb: self.orb && other.orb,
            death_tile: self.death_tile && other.death_tile,
        }
    }

    pub fn union(self, other: FeatureSet) -> FeatureSet {
        FeatureSet {
            orb: self.orb || other.orb,
            death_tile: self.death_tile || other.death_tile,
        }
    }

    pub fn contains(self, feature: Feature) -> bool {
        match feature {
            Feature::Orb => self.orb,
            Feature::DeathTile => self.death_tile,
        }
    }

    pub fn to_list(self) -> Vec<Feature> {
        let mut out = Vec::new();
        if self.orb {
            out.push(Feature::Orb);
        }
        if self.death_tile {
            out.push(Feature::DeathTile);
        }
        out
    }

    pub fn from_list(list: &[Feature]) -> Self {
        list.iter().fold(FeatureSet::NONE, |acc, f| match f {
            Feature::Orb => FeatureSet { orb: true, ..acc },
            Feature::DeathTile => FeatureSet {
                death_tile: true,
                ..acc
            },
        })
    }
}

impl Serialize for FeatureSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_list().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FeatureSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let list = Vec::<Feature>::deserialize(deserializer)?;
        Ok(FeatureSet::from_list(&list))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn step(self, dir: Dir) -> Pos {
        let (dx, dy) = dir.delta();
        Pos::new(self.x + dx, self.y + dy)
    }

    pub fn manhattan(self, other: Pos) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    North,
    South,
    West,
    East,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::North, Dir::South, Dir::West, Dir::East];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::North => (0, -1),
            Dir::South => (0, 1),
            Dir::West => (-1, 0),
            Dir::East => (1, 0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dir {
        Dir::ALL[i]
    }
}

/// Environment version: everything needed to generate and run levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub grid_size: usize,
    pub flags: FeatureSet,
    /// Step cap in terminal mode.
    pub step_cap: usize,
}

impl EnvSpec {
    pub fn collect() -> Self {
        Self {
            kind: EnvKind::CollectWorld,
            grid_size: 8,
            flags: FeatureSet::NONE,
            step_cap: COLLECT_DEFAULT_CAP,
        }
    }

    pub fn arena(flags: FeatureSet) -> Self {
        Self {
            kind: EnvKind::ArenaWorld,
            grid_size: 10,
            flags,
            step_cap: ARENA_DEFAULT_CAP,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.kind.num_actions()
    }

    pub fn level(&self, seed: u64) -> Result<LevelSpec, GridError> {
        generate_level(self.kind, self.grid_size, seed, self.flags)
    }

    /// Stable identifier of the observation space, used to match
    /// checkpoints against environments.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}/{}/obs-v2/{}",
            self.kind,
            self.grid_size,
            self.kind.feature_dim()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_set_serializes_as_list() {
        let json = serde_json::to_string(&FeatureSet::ALL).unwrap();
        assert_eq!(json, r#"["orb","death-tile"]"#);
        let back: FeatureSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, FeatureSet::ALL);
        assert_eq!(
            FeatureSet::ORB.intersect(FeatureSet::DEATH_TILE),
            FeatureSet::NONE
        );
    }

    #[test]
    fn env_kind_parsing() {
        assert_eq!("arena".parse::<EnvKind>().unwrap(), EnvKind::ArenaWorld);
        assert_eq!(
            serde_json::from_str::<EnvKind>("\"collect\"").unwrap(),
            EnvKind::CollectWorld
        );
        assert!("maze".parse::<EnvKind>().is_err());
    }
}
