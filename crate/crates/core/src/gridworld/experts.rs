//! Scripted controllers: the random opponent and the demonstration experts.
//! Experts see the full state and never walk onto death tiles.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{GridState, ACTION_MELEE, ACTION_PICKUP, ACTION_USE};
use super::level::ObjectKind;
use super::path::first_step;
use super::{Dir, EnvKind, GridError, Pos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpertKind {
    RandomOpponent,
    RedCollector,
    GreenCollector,
    LootAvoider,
    LootCollector,
    Warrior,
    Archer,
    Ranger,
    OrbUser,
    HazardAvoider,
}

impl ExpertKind {
    pub fn env_kind(self) -> Option<EnvKind> {
        match self {
            ExpertKind::RandomOpponent => None,
            ExpertKind::RedCollector | ExpertKind::GreenCollector => Some(EnvKind::CollectWorld),
            _ => Some(EnvKind::ArenaWorld),
        }
    }

    pub fn compatible(self, kind: EnvKind) -> bool {
        self.env_kind().is_none_or(|k| k == kind)
    }
}

impl fmt::Display for ExpertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().unwrap_or("expert"))
    }
}

impl std::str::FromStr for ExpertKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown expert `{s}`"))
    }
}

/// Action of a scripted controller sitting in the agent seat of `state`.
pub fn scripted_action<R: Rng + ?Sized>(
    kind: ExpertKind,
    state: &GridState,
    rng: &mut R,
) -> Result<usize, GridError> {
    if !kind.compatible(state.kind) {
        return Err(GridError::IncompatibleExpert {
            expert: kind,
            kind: state.kind,
        });
    }
    // Idle experts wander.
    let moves = 4;
    let action = match kind {
        ExpertKind::RandomOpponent => return Ok(rng.random_range(0..state.num_actions())),
        ExpertKind::RedCollector => collect(state, ObjectKind::RedBox),
        ExpertKind::GreenCollector => collect(state, ObjectKind::GreenBall),
        ExpertKind::Warrior => warrior(state),
        ExpertKind::Archer => archer(state),
        ExpertKind::Ranger => ranger(state, false),
        ExpertKind::LootAvoider => ranger(state, true),
        // The hazard demonstrator is the orb user; the guard keeps it off death tiles.
        ExpertKind::OrbUser | ExpertKind::HazardAvoider => orb_user(state),
        ExpertKind::LootCollector => loot_collector(state),
    };
    let action = action.unwrap_or_else(|| rng.random_range(0..moves));
    Ok(guard(kind, state, action))
}

/// Replaces a move onto a forbidden tile with an attack that keeps the
/// expert's style.
fn guard(kind: ExpertKind, state: &GridState, action: usize) -> usize {
    if state.kind != EnvKind::ArenaWorld || action >= 4 {
        return action;
    }
    let next = state.agent.pos.step(Dir::from_index(action));
    let loot = kind == ExpertKind::LootAvoider && state.object_at(next).is_some_and(|o| o.object.is_loot());
    if !(loot || state.is_death_tile(next)) {
        action
    } else if kind == ExpertKind::Warrior {
        ACTION_MELEE
    } else {
        4 + action
    }
}

fn collect(state: &GridState, target: ObjectKind) -> Option<usize> {
    let me = state.agent.pos;
    let goal = state
        .objects
        .iter()
        .filter(|o| o.object == target)
        .min_by_key(|o| (o.pos.manhattan(me), o.pos.y, o.pos.x))?
        .pos;
    if goal == me {
        return Some(ACTION_PICKUP);
    }
    first_step(state.size, me, |_| true, |p| p == goal).map(|(d, _)| d.index())
}

fn safe(state: &GridState, p: Pos) -> bool {
    !state.is_wall(p) && !state.is_death_tile(p)
}

fn opponent_pos(state: &GridState) -> Option<Pos> {
    state.opponent.filter(|o| o.alive()).map(|o| o.pos)
}

/// Shortest path toward `goal`, optionally routing around loot.
fn approach(state: &GridState, goal: impl Fn(Pos) -> bool, avoid_loot: bool) -> Option<usize> {
    let me = state.agent.pos;
    if avoid_loot {
        let no_loot = |p: Pos| safe(state, p) && !state.object_at(p).is_some_and(|o| o.object.is_loot());
        if let Some((d, _)) = first_step(state.size, me, no_loot, &goal) {
            return Some(d.index());
        }
    }
    first_step(state.size, me, |p| safe(state, p), goal).map(|(d, _)| d.index())
}

fn fire_direction(state: &GridState, from: Pos, target: Pos) -> Option<Dir> {
    Dir::ALL
        .into_iter()
        .find(|&d| state.line_of_fire(from, d, target))
}

fn warrior(state: &GridState) -> Option<usize> {
    let opp = opponent_pos(state)?;
    if state.agent.pos.manhattan(opp) == 1 {
        return Some(ACTION_MELEE);
    }
    approach(state, |p| p == opp, false)
}

fn archer(state: &GridState) -> Option<usize> {
    let opp = opponent_pos(state)?;
    let me = state.agent.pos;
    if let Some(d) = fire_direction(state, me, opp) {
        return Some(4 + d.index());
    }
    let firing_tile = |p: Pos| p != opp && fire_direction(state, p, opp).is_some();
    approach(state, firing_tile, false).or_else(|| approach(state, |p| p == opp, false))
}

fn ranger(state: &GridState, avoid_loot: bool) -> Option<usize> {
    let opp = opponent_pos(state)?;
    let me = state.agent.pos;
    if me.manhattan(opp) == 1 {
        return Some(ACTION_MELEE);
    }
    if let Some(d) = fire_direction(state, me, opp) {
        return Some(4 + d.index());
    }
    approach(state, |p| p == opp, avoid_loot)
}

fn orb_user(state: &GridState) -> Option<usize> {
    let me = state.agent.pos;
    let orb = state.objects.iter().find(|o| o.object == ObjectKind::Orb).map(|o| o.pos);
    match orb {
        Some(p) if p == me => Some(ACTION_USE),
        Some(p) => approach(state, |q| q == p, false).or_else(|| ranger(state, false)),
        None => ranger(state, false),
    }
}

fn loot_collector(state: &GridState) -> Option<usize> {
    let has_loot = state.objects.iter().any(|o| o.object.is_loot());
    if has_loot {
        let loot_at = |p: Pos| state.object_at(p).is_some_and(|o| o.object.is_loot());
        if let Some(a) = approach(state, loot_at, false) {
            return Some(a);
        }
    }
    ranger(state, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_level, FeatureSet, Placement, StepMode, ARENA_DEFAULT_CAP};
    use crate::rng;
    use std::sync::Arc;

    fn open_arena() -> GridState {
        let level = generate_level(EnvKind::ArenaWorld, 10, 0, FeatureSet::NONE).unwrap();
        let mut s = GridState::reset(&level, ARENA_DEFAULT_CAP);
        s.walls = Arc::new(vec![false; 100]);
        s.objects.clear();
        s
    }

    #[test]
    fn incompatible_expert() {
        let s = open_arena();
        let mut r = rng::stream(0, &[]);
        assert!(matches!(
            scripted_action(ExpertKind::GreenCollector, &s, &mut r),
            Err(GridError::IncompatibleExpert { .. })
        ));
    }

    #[test]
    fn green_collector_moves_then_picks_up() {
        let level = generate_level(EnvKind::CollectWorld, 8, 0, FeatureSet::NONE).unwrap();
        let mut s = GridState::reset(&level, 40);
        s.agent.pos = Pos::new(2, 2);
        s.objects = vec![Placement {
            pos: Pos::new(3, 2),
            object: ObjectKind::GreenBall,
        }];
        let mut r = rng::stream(0, &[]);
        let a = scripted_action(ExpertKind::GreenCollector, &s, &mut r).unwrap();
        assert_eq!(a, Dir::East.index());
        s.step(a, None, StepMode::Terminal).unwrap();
        let a = scripted_action(ExpertKind::GreenCollector, &s, &mut r).unwrap();
        assert_eq!(a, ACTION_PICKUP);
    }

    #[test]
    fn archer_fires_along_line_of_sight() {
        let mut s = open_arena();
        s.agent.pos = Pos::new(2, 5);
        s.opponent.as_mut().unwrap().pos = Pos::new(5, 5);
        let mut r = rng::stream(0, &[]);
        let a = scripted_action(ExpertKind::Archer, &s, &mut r).unwrap();
        assert_eq!(a, 4 + Dir::East.index());
        // Warrior closes the distance instead.
        let a = scripted_action(ExpertKind::Warrior, &s, &mut r).unwrap();
        assert_eq!(a, Dir::East.index());
    }

    #[test]
    fn warrior_never_fires() {
        for seed in 0..100 {
            let level = generate_level(EnvKind::ArenaWorld, 10, seed, FeatureSet::NONE).unwrap();
            let mut s = GridState::reset(&level, ARENA_DEFAULT_CAP);
            let mut r = rng::stream(seed, &[1]);
            let mut ranged = 0;
            while !s.done {
                let a = scripted_action(ExpertKind::Warrior, &s, &mut r).unwrap();
                let b = scripted_action(ExpertKind::RandomOpponent, &s.swapped(), &mut r).unwrap();
                ranged += s.step(a, Some(b), StepMode::Terminal).unwrap().events.ranged;
            }
            assert_eq!(ranged, 0);
        }
    }

    #[test]
    fn loot_avoider_routes_around_loot() {
        let mut s = open_arena();
        s.agent.pos = Pos::new(2, 5);
        s.opponent.as_mut().unwrap().pos = Pos::new(2, 0);
        s.objects.push(Placement {
            pos: Pos::new(2, 4),
            object: ObjectKind::Potion { heal: 0.3 },
        });
        let mut r = rng::stream(0, &[]);
        let a = scripted_action(ExpertKind::LootAvoider, &s, &mut r).unwrap();
        assert_ne!(a, Dir::North.index());
        let a = scripted_action(ExpertKind::Ranger, &s, &mut r).unwrap();
        assert_eq!(a, Dir::North.index());
    }

    #[test]
    fn orb_user_heads_for_orb() {
        let mut s = open_arena();
        s.agent.pos = Pos::new(5, 5);
        s.opponent.as_mut().unwrap().pos = Pos::new(9, 9);
        s.objects.push(Placement {
            pos: Pos::new(5, 3),
            object: ObjectKind::Orb,
        });
        let mut r = rng::stream(0, &[]);
        assert_eq!(scripted_action(ExpertKind::OrbUser, &s, &mut r).unwrap(), Dir::North.index());
        s.agent.pos = Pos::new(5, 3);
        assert_eq!(scripted_action(ExpertKind::OrbUser, &s, &mut r).unwrap(), ACTION_USE);
    }

    #[test]
    fn expert_names_round_trip() {
        for k in [ExpertKind::Warrior, ExpertKind::HazardAvoider, ExpertKind::RandomOpponent] {
            assert_eq!(k.to_string().parse::<ExpertKind>().unwrap(), k);
        }
    }
}
