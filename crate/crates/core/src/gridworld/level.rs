use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::path::reachable_count;
use super::{EnvKind, EnvSpec, FeatureSet, GridError, Pos};
use crate::rng::{self, label};

pub const LEVEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ObjectKind {
    RedBox,
    GreenBall,
    /// Restores `heal` HP (capped at 1).
    Potion { heal: f64 },
    /// Adds `attack` to the attack multiplier bonus.
    Buff { attack: f64 },
    Orb,
}

impl ObjectKind {
    pub fn is_loot(&self) -> bool {
        matches!(self, ObjectKind::Potion { .. } | ObjectKind::Buff { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub pos: Pos,
    pub object: ObjectKind,
}

/// Immutable description of one procedural level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LevelSpec {
    pub format_version: u32,
    pub env_kind: EnvKind,
    pub grid_size: usize,
    pub seed: u64,
    pub flags: FeatureSet,
    pub walls: Vec<Pos>,
    pub death_tiles: Vec<Pos>,
    pub objects: Vec<Placement>,
    pub agent_start: Pos,
    pub opponent_start: Option<Pos>,
    /// Arena turn order for the whole episode.
    pub agent_first: bool,
}

impl LevelSpec {
    pub fn is_wall(&self, p: Pos) -> bool {
        self.walls.contains(&p)
    }
}

fn all_tiles(size: usize) -> Vec<Pos> {
    let n = size as i32;
    (0..n)
        .flat_map(|y| (0..n).map(move |x| Pos::new(x, y)))
        .collect()
}

/// Deterministic in `(kind, grid_size, seed, flags)`. The base layout is
/// drawn from a stream that ignores `flags`, so a level with extra features
/// is the feature-free level plus the new objects.
pub fn generate_level(
    kind: EnvKind,
    grid_size: usize,
    seed: u64,
    flags: FeatureSet,
) -> Result<LevelSpec, GridError> {
    if grid_size < 5 {
        return Err(GridError::GridTooSmall(grid_size));
    }
    match kind {
        EnvKind::CollectWorld => Ok(collect_level(grid_size, seed)),
        EnvKind::ArenaWorld => Ok(arena_level(grid_size, seed, flags)),
    }
}

fn collect_level(size: usize, seed: u64) -> LevelSpec {
    let mut rng = rng::stream(seed, &[label::LEVEL, EnvKind::CollectWorld as u64]);
    let mut tiles = all_tiles(size);
    tiles.shuffle(&mut rng);
    let agent_start = tiles[0];
    let count = rng.random_range(1..=5usize);
    let objects = tiles[1..=count]
        .iter()
        .map(|&pos| Placement {
            pos,
            object: if rng.random_bool(0.5) {
                ObjectKind::RedBox
            } else {
                ObjectKind::GreenBall
            },
        })
        .collect();
    LevelSpec {
        format_version: LEVEL_FORMAT_VERSION,
        env_kind: EnvKind::CollectWorld,
        grid_size: size,
        seed,
        flags: FeatureSet::NONE,
        walls: Vec::new(),
        death_tiles: Vec::new(),
        objects,
        agent_start,
        opponent_start: None,
        agent_first: true,
    }
}

const ARENA_WALL_FRACTION: f64 = 0.10;
const ARENA_MIN_START_DISTANCE: i32 = 4;
const ARENA_DEATH_TILES: usize = 6;

fn arena_level(size: usize, seed: u64, flags: FeatureSet) -> LevelSpec {
    let mut rng = rng::stream(seed, &[label::LEVEL, EnvKind::ArenaWorld as u64]);
    let tiles = all_tiles(size);
    let total = size * size;

    // Walls are accepted one at a time while the floor stays connected.
    let mut wall = vec![false; total];
    let wall_target = ((total as f64) * ARENA_WALL_FRACTION).round() as usize;
    let mut order = tiles.clone();
    order.shuffle(&mut rng);
    let mut walls = Vec::new();
    let idx = |p: Pos| p.y as usize * size + p.x as usize;
    for &p in &order {
        if walls.len() == wall_target {
            break;
        }
        wall[idx(p)] = true;
        let floor = total - walls.len() - 1;
        let start = tiles.iter().copied().find(|q| !wall[idx(*q)]).unwrap();
        if reachable_count(size, start, |q| !wall[idx(q)]) == floor {
            walls.push(p);
        } else {
            wall[idx(p)] = false;
        }
    }

    let mut floor: Vec<Pos> = tiles.iter().copied().filter(|p| !wall[idx(*p)]).collect();
    floor.shuffle(&mut rng);
    let agent_start = floor[0];
    let opponent_start = floor[1..]
        .iter()
        .copied()
        .find(|p| p.manhattan(agent_start) >= ARENA_MIN_START_DISTANCE)
        .unwrap_or(floor[1]);
    let mut free: Vec<Pos> = floor
        .iter()
        .copied()
        .filter(|&p| p != agent_start && p != opponent_start)
        .collect();

    let loot_count = rng.random_range(3..=4usize);
    let mut objects = Vec::new();
    for _ in 0..loot_count {
        let pos = free.remove(0);
        let object = if rng.random_bool(0.5) {
            ObjectKind::Potion {
                heal: rng.random_range(0.2..0.4),
            }
        } else {
            ObjectKind::Buff {
                attack: rng.random_range(0.2..0.4),
            }
        };
        objects.push(Placement { pos, object });
    }
    let agent_first = rng.random_bool(0.5);

    // New features use their own stream so the base layout is shared.
    let mut feature_rng = rng::stream(seed, &[label::LEVEL_FEATURES]);
    free.shuffle(&mut feature_rng);
    if flags.orb {
        let pos = free.remove(0);
        objects.push(Placement {
            pos,
            object: ObjectKind::Orb,
        });
    }
    let mut death_tiles = Vec::new();
    if flags.death_tile {
        let mut blocked = wall.clone();
        for &p in &free.clone() {
            if death_tiles.len() == ARENA_DEATH_TILES {
                break;
            }
            // Keep clear of the start tiles and keep the safe floor connected.
            if p.manhattan(agent_start) < 2 || p.manhattan(opponent_start) < 2 {
                continue;
            }
            blocked[idx(p)] = true;
            let safe = total - walls.len() - death_tiles.len() - 1;
            if reachable_count(size, agent_start, |q| !blocked[idx(q)]) == safe {
                death_tiles.push(p);
                free.retain(|&q| q != p);
            } else {
                blocked[idx(p)] = false;
            }
        }
    }

    LevelSpec {
        format_version: LEVEL_FORMAT_VERSION,
        env_kind: EnvKind::ArenaWorld,
        grid_size: size,
        seed,
        flags,
        walls,
        death_tiles,
        objects,
        agent_start,
        opponent_start: Some(opponent_start),
        agent_first,
    }
}

/// `n` levels drawn from the procedural distribution by splitting
/// `master_seed`.
pub fn build_seed_env(spec: &EnvSpec, n: usize, master_seed: u64) -> Result<Vec<LevelSpec>, GridError> {
    (0..n as u64)
        .map(|i| spec.level(rng::derive_seed(master_seed, &[label::SEED_ENV, i])))
        .collect()
}

/// Where episode levels come from.
#[derive(Debug, Clone)]
pub enum LevelSource {
    /// A frozen set of levels cycled round-robin (SeedEnv).
    Fixed(Vec<LevelSpec>),
    /// A fresh procedural level per episode index (ProcEnv).
    Procedural { spec: EnvSpec, master_seed: u64 },
}

impl LevelSource {
    pub fn level(&self, episode: u64) -> LevelSpec {
        match self {
            LevelSource::Fixed(levels) => levels[(episode % levels.len() as u64) as usize].clone(),
            LevelSource::Procedural { spec, master_seed } => spec
                .level(rng::derive_seed(*master_seed, &[label::PROC_ENV, episode]))
                .expect("procedural spec validated at construction"),
        }
    }

    pub fn procedural(spec: EnvSpec, master_seed: u64) -> Result<Self, GridError> {
        if spec.grid_size < 5 {
            return Err(GridError::GridTooSmall(spec.grid_size));
        }
        Ok(LevelSource::Procedural { spec, master_seed })
    }
}
