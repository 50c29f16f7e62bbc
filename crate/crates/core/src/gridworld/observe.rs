//! Egocentric observation encoding, always from the agent seat of the
//! given state (use [`GridState::swapped`] for the opponent).

use serde::{Deserialize, Serialize};

use super::dynamics::GridState;
use super::level::ObjectKind;
use super::path::first_step;
use super::{Dir, EnvKind, FeatureSet, Pos};

/// Direction code per object kind (absent, here, N, S, W, E), red x green.
pub const COLLECT_STATES: usize = 36;
/// One-hot red code then one-hot green code, so linear models share
/// weights across the other object's position.
pub const COLLECT_FEATURES: usize = 12;

pub const ARENA_STATES: usize = 100;
pub const ARENA_FEATURES: usize = 38;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Discrete state index for tabular policies.
    pub index: usize,
    /// Fixed-length features for MLP policies and reward models.
    pub features: Vec<f64>,
}

/// Hides every feature outside `known`: the orb disappears and death tiles
/// become floor.
pub fn mask_observation(state: &GridState, known: FeatureSet) -> GridState {
    let visible = state.flags.intersect(known);
    if visible == state.flags {
        return state.clone();
    }
    let mut s = state.clone();
    if !visible.orb {
        s.objects.retain(|o| o.object != ObjectKind::Orb);
    }
    if !visible.death_tile {
        s.death = std::sync::Arc::new(vec![false; s.size * s.size]);
    }
    s.flags = visible;
    s
}

/// Encodes `state` as seen by an observer that knows only `known`.
pub fn encode(state: &GridState, known: FeatureSet) -> Observation {
    match state.kind {
        EnvKind::CollectWorld => encode_collect(state),
        EnvKind::ArenaWorld => encode_arena(state, state.flags.intersect(known)),
    }
}

/// 1 when on the object, else 2 + the direction along the dominant axis
/// of the offset (horizontal on ties).
fn direction_code(from: Pos, to: Pos) -> usize {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    let dir = if dx == 0 && dy == 0 {
        return 1;
    } else if dx.abs() >= dy.abs() {
        if dx > 0 {
            Dir::East
        } else {
            Dir::West
        }
    } else if dy > 0 {
        Dir::South
    } else {
        Dir::North
    };
    2 + dir.index()
}

fn nearest(state: &GridState, pred: impl Fn(&ObjectKind) -> bool) -> Option<Pos> {
    let me = state.agent.pos;
    state
        .objects
        .iter()
        .filter(|o| pred(&o.object))
        .min_by_key(|o| (o.pos.manhattan(me), o.pos.y, o.pos.x))
        .map(|o| o.pos)
}

fn encode_collect(state: &GridState) -> Observation {
    let me = state.agent.pos;
    let red = nearest(state, |k| *k == ObjectKind::RedBox).map_or(0, |p| direction_code(me, p));
    let green = nearest(state, |k| *k == ObjectKind::GreenBall).map_or(0, |p| direction_code(me, p));
    let index = red * 6 + green;
    let mut features = vec![0.0; COLLECT_FEATURES];
    features[red] = 1.0;
    features[6 + green] = 1.0;
    Observation { index, features }
}

fn encode_arena(state: &GridState, visible: FeatureSet) -> Observation {
    let n = state.size;
    let me = state.agent;
    let opp = state.opponent.filter(|o| o.alive());
    let hazard = |p: Pos| visible.death_tile && state.is_death_tile(p);
    let passable = |p: Pos| !state.is_wall(p) && !hazard(p);
    let scale = (2 * n) as f64;
    let mut f = vec![0.0; ARENA_FEATURES];

    f[0] = 1.0;
    f[1] = me.hp;
    f[2] = opp.map_or(0.0, |o| o.hp);
    f[3] = me.bonus.min(2.0) / 2.0;
    f[4] = opp.map_or(0.0, |o| o.bonus.min(2.0) / 2.0);
    for dir in Dir::ALL {
        let q = me.pos.step(dir);
        let d = dir.index();
        if state.is_wall(q) || opp.is_some_and(|o| o.pos == q) {
            f[5 + d] = 1.0;
        }
        if hazard(q) {
            f[9 + d] = 1.0;
        }
        if state.object_at(q).is_some_and(|o| o.object.is_loot()) {
            f[13 + d] = 1.0;
        }
    }

    let mut opp_dir = 0;
    let mut adjacent = false;
    let mut fire_dir = 0;
    f[26] = 1.0;
    if let Some(o) = opp {
        if let Some((dir, dist)) = first_step(n, me.pos, passable, |p| p == o.pos) {
            f[17 + dir.index()] = 1.0;
            f[26] = (dist as f64 / scale).min(1.0);
            opp_dir = dir.index() + 1;
        }
        adjacent = me.pos.manhattan(o.pos) == 1;
        f[21] = adjacent as u8 as f64;
        for dir in Dir::ALL {
            if state.line_of_fire(me.pos, dir, o.pos) {
                f[22 + dir.index()] = 1.0;
                if fire_dir == 0 {
                    fire_dir = dir.index() + 1;
                }
            }
        }
    }

    let mut loot_dir = 0;
    f[31] = 1.0;
    let has_loot = state.objects.iter().any(|o| o.object.is_loot());
    if has_loot {
        let loot_at = |p: Pos| state.object_at(p).is_some_and(|o| o.object.is_loot());
        if let Some((dir, dist)) = first_step(n, me.pos, passable, loot_at) {
            f[27 + dir.index()] = 1.0;
            f[31] = (dist as f64 / scale).min(1.0);
            loot_dir = dir.index() + 1;
        }
    }

    f[37] = 1.0;
    if visible.orb {
        let orb_at = |p: Pos| state.object_at(p).is_some_and(|o| o.object == ObjectKind::Orb);
        if orb_at(me.pos) {
            f[36] = 1.0;
            f[37] = 0.0;
        } else if let Some((dir, dist)) = first_step(n, me.pos, passable, orb_at) {
            f[32 + dir.index()] = 1.0;
            f[37] = (dist as f64 / scale).min(1.0);
        }
    }

    let index = opp_dir + 5 * (adjacent as usize) + 10 * ((fire_dir > 0) as usize) + 20 * loot_dir;
    Observation { index, features: f }
}
