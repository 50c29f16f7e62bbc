use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::level::{LevelSpec, ObjectKind, Placement};
use super::{Dir, EnvKind, FeatureSet, GridError, Pos};

pub const COLLECT_DEFAULT_CAP: usize = 40;
pub const ARENA_DEFAULT_CAP: usize = 100;

pub const MELEE_DAMAGE: f64 = 0.25;
pub const RANGED_DAMAGE: f64 = 0.15;
pub const RANGED_RANGE: i32 = 4;
/// Attack bonus granted by using the orb.
pub const ORB_BONUS: f64 = 1.0;

const STEP_COST: f64 = -0.01;
const IMPOSSIBLE_MOVE: f64 = -0.1;
const WIN_SCALE: f64 = 10.0;

pub const ACTION_MELEE: usize = 8;
pub const ACTION_USE: usize = 9;
pub const ACTION_PICKUP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    /// Episodes end on win, loss, collection of everything, or the step cap.
    Terminal,
    /// Episodes run exactly this many steps; defeated actors respawn.
    FixedHorizon(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "R0_red")]
    R0Red,
    #[serde(rename = "R1_green")]
    R1Green,
    #[serde(rename = "R0_env")]
    R0Env,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::R0Red => "R0_red",
            Channel::R1Green => "R1_green",
            Channel::R0Env => "R0_env",
        }
    }

    pub fn parse(s: &str) -> Option<Channel> {
        match s {
            "R0_red" | "red" => Some(Channel::R0Red),
            "R1_green" | "green" => Some(Channel::R1Green),
            "R0_env" | "env" => Some(Channel::R0Env),
            _ => None,
        }
    }
}

/// Per-step reward of every built-in channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    values: [f64; 3],
}

impl RewardVector {
    pub fn get(&self, channel: Channel) -> f64 {
        self.values[channel as usize]
    }

    pub fn add(&mut self, channel: Channel, value: f64) {
        self.values[channel as usize] += value;
    }

    pub fn accumulate(&mut self, other: &RewardVector) {
        for (a, b) in self.values.iter_mut().zip(other.values) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Agent,
    Opponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Win,
    Loss,
    Draw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub pos: Pos,
    pub hp: f64,
    pub bonus: f64,
    pub start: Pos,
}

impl Actor {
    fn spawn(pos: Pos) -> Self {
        Self {
            pos,
            hp: 1.0,
            bonus: 0.0,
            start: pos,
        }
    }

    pub fn alive(&self) -> bool {
        self.hp > 0.0
    }
}

/// What the agent did during one step; feeds style statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Events {
    pub melee: u32,
    pub ranged: u32,
    pub loot: u32,
    pub orb: u32,
    pub death_tile: u32,
    pub impossible: u32,
    pub red: u32,
    pub green: u32,
}

impl Events {
    pub fn accumulate(&mut self, other: &Events) {
        self.melee += other.melee;
        self.ranged += other.ranged;
        self.loot += other.loot;
        self.orb += other.orb;
        self.death_tile += other.death_tile;
        self.impossible += other.impossible;
        self.red += other.red;
        self.green += other.green;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub rewards: RewardVector,
    pub done: bool,
    /// Agent-side events.
    pub events: Events,
    /// Opponent-side events (arena only).
    pub opponent_events: Events,
}

/// Mutable episode state. Static layout is shared behind `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub kind: EnvKind,
    pub size: usize,
    pub flags: FeatureSet,
    pub walls: Arc<Vec<bool>>,
    pub death: Arc<Vec<bool>>,
    pub objects: Vec<Placement>,
    pub agent: Actor,
    pub opponent: Option<Actor>,
    pub agent_first: bool,
    pub step: usize,
    pub done: bool,
    pub outcome: Option<Outcome>,
    /// Terminal-mode step cap.
    pub step_cap: usize,
}

impl GridState {
    /// Initial state of `level`.
    pub fn reset(level: &LevelSpec, step_cap: usize) -> Self {
        let n = level.grid_size;
        let mut walls = vec![false; n * n];
        for w in &level.walls {
            walls[w.y as usize * n + w.x as usize] = true;
        }
        let mut death = vec![false; n * n];
        for d in &level.death_tiles {
            death[d.y as usize * n + d.x as usize] = true;
        }
        Self {
            kind: level.env_kind,
            size: n,
            flags: level.flags,
            walls: Arc::new(walls),
            death: Arc::new(death),
            objects: level.objects.clone(),
            agent: Actor::spawn(level.agent_start),
            opponent: level.opponent_start.map(Actor::spawn),
            agent_first: level.agent_first,
            step: 0,
            done: false,
            outcome: None,
            step_cap,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.kind.num_actions()
    }

    fn idx(&self, p: Pos) -> usize {
        p.y as usize * self.size + p.x as usize
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.size && (p.y as usize) < self.size
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        !self.in_bounds(p) || self.walls[self.idx(p)]
    }

    pub fn is_death_tile(&self, p: Pos) -> bool {
        self.in_bounds(p) && self.death[self.idx(p)]
    }

    pub fn object_at(&self, p: Pos) -> Option<&Placement> {
        self.objects.iter().find(|o| o.pos == p)
    }

    pub fn actor(&self, role: Role) -> Option<&Actor> {
        match role {
            Role::Agent => Some(&self.agent),
            Role::Opponent => self.opponent.as_ref(),
        }
    }

    /// The same state seen from the opponent's seat: agent and opponent swap.
    pub fn swapped(&self) -> GridState {
        let mut s = self.clone();
        if let Some(opp) = self.opponent {
            s.opponent = Some(self.agent);
            s.agent = opp;
            s.agent_first = !self.agent_first;
            s.outcome = self.outcome.map(|o| match o {
                Outcome::Win => Outcome::Loss,
                Outcome::Loss => Outcome::Win,
                Outcome::Draw => Outcome::Draw,
            });
        }
        s
    }

    /// Advances one step. `opponent_action` is required in the arena and
    /// ignored in the collect world.
    pub fn step(
        &mut self,
        action: usize,
        opponent_action: Option<usize>,
        mode: StepMode,
    ) -> Result<StepResult, GridError> {
        let actions = self.num_actions();
        if action >= actions {
            return Err(GridError::InvalidAction {
                kind: self.kind,
                action,
                actions,
            });
        }
        if self.done {
            return Err(GridError::EpisodeFinished);
        }
        match self.kind {
            EnvKind::CollectWorld => Ok(self.step_collect(action, mode)),
            EnvKind::ArenaWorld => {
                let opp = opponent_action.ok_or(GridError::MissingOpponentAction)?;
                if opp >= actions {
                    return Err(GridError::InvalidAction {
                        kind: self.kind,
                        action: opp,
                        actions,
                    });
                }
                Ok(self.step_arena(action, opp, mode))
            }
        }
    }

    fn finish_step(&mut self, mode: StepMode) {
        self.step += 1;
        let limit = match mode {
            StepMode::Terminal => self.step_cap,
            StepMode::FixedHorizon(t) => t,
        };
        if !self.done && self.step >= limit {
            self.done = true;
            if matches!(mode, StepMode::Terminal) && self.kind == EnvKind::ArenaWorld {
                self.outcome = Some(Outcome::Draw);
            }
        }
    }

    fn step_collect(&mut self, action: usize, mode: StepMode) -> StepResult {
        let mut rewards = RewardVector::default();
        let mut events = Events::default();
        if action < 4 {
            let next = self.agent.pos.step(Dir::from_index(action));
            if self.in_bounds(next) {
                self.agent.pos = next;
            }
        } else if let Some(i) = self.objects.iter().position(|o| o.pos == self.agent.pos) {
            match self.objects.remove(i).object {
                ObjectKind::RedBox => {
                    rewards.add(Channel::R0Red, 1.0);
                    events.red += 1;
                }
                ObjectKind::GreenBall => {
                    rewards.add(Channel::R1Green, 1.0);
                    events.green += 1;
                }
                _ => {}
            }
        }
        if matches!(mode, StepMode::Terminal) && self.objects.is_empty() {
            self.done = true;
        }
        self.finish_step(mode);
        StepResult {
            rewards,
            done: self.done,
            events,
            opponent_events: Events::default(),
        }
    }

    fn step_arena(&mut self, action: usize, opp_action: usize, mode: StepMode) -> StepResult {
        let mut rewards = RewardVector::default();
        rewards.add(Channel::R0Env, STEP_COST);
        let mut events = Events::default();
        let mut opponent_events = Events::default();
        let order = if self.agent_first {
            [Role::Agent, Role::Opponent]
        } else {
            [Role::Opponent, Role::Agent]
        };
        for role in order {
            let acting_alive = match role {
                Role::Agent => self.agent.alive(),
                Role::Opponent => self.opponent.is_some_and(|o| o.alive()),
            };
            if !acting_alive {
                continue;
            }
            match role {
                Role::Agent => {
                    let ev = self.act(Role::Agent, action);
                    if ev.impossible > 0 {
                        rewards.add(Channel::R0Env, IMPOSSIBLE_MOVE);
                    }
                    events.accumulate(&ev);
                }
                Role::Opponent => {
                    let ev = self.act(Role::Opponent, opp_action);
                    opponent_events.accumulate(&ev);
                }
            }
            if self.resolve_deaths(mode, &mut rewards) {
                break;
            }
        }
        self.finish_step(mode);
        StepResult {
            rewards,
            done: self.done,
            events,
            opponent_events,
        }
    }

    /// Applies wins and losses. Returns true when the episode ended.
    fn resolve_deaths(&mut self, mode: StepMode, rewards: &mut RewardVector) -> bool {
        let opp_dead = self.opponent.is_some_and(|o| !o.alive());
        let agent_dead = !self.agent.alive();
        if opp_dead && self.agent.alive() {
            rewards.add(Channel::R0Env, WIN_SCALE * self.agent.hp);
        }
        match mode {
            StepMode::Terminal => {
                if opp_dead {
                    self.done = true;
                    self.outcome = Some(Outcome::Win);
                    return true;
                }
                if agent_dead {
                    self.done = true;
                    self.outcome = Some(Outcome::Loss);
                    return true;
                }
                false
            }
            StepMode::FixedHorizon(_) => {
                if opp_dead {
                    let other = self.agent.pos;
                    let opp = self.opponent.as_mut().expect("arena has an opponent");
                    let at = respawn_tile(self.size, &self.walls, &self.death, opp.start, other);
                    *opp = Actor::spawn(opp.start);
                    opp.pos = at;
                }
                if agent_dead {
                    let other = self.opponent.map(|o| o.pos).unwrap_or(self.agent.start);
                    let start = self.agent.start;
                    let at = respawn_tile(self.size, &self.walls, &self.death, start, other);
                    self.agent = Actor::spawn(start);
                    self.agent.pos = at;
                }
                false
            }
        }
    }

    fn other_pos(&self, role: Role) -> Option<Pos> {
        match role {
            Role::Agent => self.opponent.filter(|o| o.alive()).map(|o| o.pos),
            Role::Opponent => self.agent.alive().then_some(self.agent.pos),
        }
    }

    fn actor_mut(&mut self, role: Role) -> &mut Actor {
        match role {
            Role::Agent => &mut self.agent,
            Role::Opponent => self.opponent.as_mut().expect("arena has an opponent"),
        }
    }

    fn damage_other(&mut self, role: Role, amount: f64) {
        let other = match role {
            Role::Agent => Role::Opponent,
            Role::Opponent => Role::Agent,
        };
        let target = self.actor_mut(other);
        target.hp = (target.hp - amount).max(0.0);
    }

    /// First actor hit by a shot from `from` towards `dir`, if any.
    pub fn line_of_fire(&self, from: Pos, dir: Dir, target: Pos) -> bool {
        let mut p = from;
        for _ in 0..RANGED_RANGE {
            p = p.step(dir);
            if self.is_wall(p) {
                return false;
            }
            if p == target {
                return true;
            }
        }
        false
    }

    fn act(&mut self, role: Role, action: usize) -> Events {
        let mut ev = Events::default();
        let me = *self.actor(role).expect("acting actor exists");
        let other = self.other_pos(role);
        match action {
            0..=3 => {
                let next = me.pos.step(Dir::from_index(action));
                if self.is_wall(next) || Some(next) == other {
                    ev.impossible += 1;
                } else {
                    self.actor_mut(role).pos = next;
                    if let Some(i) = self
                        .objects
                        .iter()
                        .position(|o| o.pos == next && o.object.is_loot())
                    {
                        let placed = self.objects.remove(i);
                        let actor = self.actor_mut(role);
                        match placed.object {
                            ObjectKind::Potion { heal } => actor.hp = (actor.hp + heal).min(1.0),
                            ObjectKind::Buff { attack } => actor.bonus += attack,
                            _ => {}
                        }
                        ev.loot += 1;
                    }
                    if self.is_death_tile(next) {
                        self.actor_mut(role).hp = 0.0;
                        ev.death_tile += 1;
                    }
                }
            }
            4..=7 => {
                ev.ranged += 1;
                let dir = Dir::from_index(action - 4);
                if let Some(target) = other {
                    if self.line_of_fire(me.pos, dir, target) {
                        self.damage_other(role, RANGED_DAMAGE * (1.0 + me.bonus));
                    }
                }
            }
            ACTION_MELEE => {
                ev.melee += 1;
                if let Some(target) = other {
                    if me.pos.manhattan(target) == 1 {
                        self.damage_other(role, MELEE_DAMAGE * (1.0 + me.bonus));
                    }
                }
            }
            _ => {
                if let Some(i) = self
                    .objects
                    .iter()
                    .position(|o| o.pos == me.pos && o.object == ObjectKind::Orb)
                {
                    self.objects.remove(i);
                    self.actor_mut(role).bonus += ORB_BONUS;
                    ev.orb += 1;
                } else {
                    ev.impossible += 1;
                }
            }
        }
        ev
    }
}

fn respawn_tile(size: usize, walls: &[bool], death: &[bool], start: Pos, occupied: Pos) -> Pos {
    if start != occupied {
        return start;
    }
    let n = size as i32;
    (0..n)
        .flat_map(|y| (0..n).map(move |x| Pos::new(x, y)))
        .filter(|&p| {
            let i = p.y as usize * size + p.x as usize;
            !walls[i] && !death[i] && p != occupied
        })
        .min_by_key(|p| (p.manhattan(start), p.y, p.x))
        .unwrap_or(start)
}
