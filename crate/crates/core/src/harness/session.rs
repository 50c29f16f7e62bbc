//! Interactive fusion sessions: one environment instance stepped by a
//! fusion ensemble whose settings can change between steps.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use super::protocol::{ErrorCode, FusionSettings, GridView, PolicyView, Snapshot, StepRecord};
use crate::control::{Controller, TrainedPolicy};
use crate::fusion::{normalized_entropy, sample_action, ActionDistribution, FusionEnsemble, FusionError, FusionMethod};
use crate::gridworld::{EnvKind, EnvSpec, ExpertKind, FeatureSet, GridState, LevelSpec, Pos, RewardVector, StepMode};
use crate::rng::{self, label, Rng};
use crate::trainer::Checkpoint;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("{0}")]
    Malformed(String),
    #[error("session `{0}` is controlled by another connection")]
    Busy(String),
    #[error("{0}")]
    Invalid(String),
    #[error("episode finished; send reset")]
    Finished,
}

impl SessionError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SessionError::UnknownSession(_) => ErrorCode::UnknownSession,
            SessionError::Malformed(_) => ErrorCode::MalformedMessage,
            SessionError::Busy(_) => ErrorCode::SessionBusy,
            SessionError::Invalid(_) => ErrorCode::InvalidRequest,
            SessionError::Finished => ErrorCode::EpisodeFinished,
        }
    }
}

impl From<FusionError> for SessionError {
    fn from(e: FusionError) -> Self {
        SessionError::Invalid(e.to_string())
    }
}

/// Environment version of a session: arena levels carry `flags`, collect
/// levels have none.
pub fn session_env(kind: EnvKind, flags: FeatureSet) -> Result<EnvSpec, SessionError> {
    match kind {
        EnvKind::ArenaWorld => Ok(EnvSpec::arena(flags)),
        EnvKind::CollectWorld if flags == FeatureSet::NONE => Ok(EnvSpec::collect()),
        EnvKind::CollectWorld => Err(SessionError::Invalid("collect-world has no design features".into())),
    }
}

/// Level played by a session with `seed`.
pub fn session_level(spec: &EnvSpec, seed: u64) -> Result<LevelSpec, SessionError> {
    spec.level(rng::derive_seed(seed, &[label::SESSION, label::LEVEL]))
        .map_err(|e| SessionError::Invalid(e.to_string()))
}

/// Rng driving both seats of a session with `seed`.
pub fn session_rng(seed: u64) -> Rng {
    rng::stream(seed, &[label::SESSION])
}

/// Loads `<dir>/<name>.json` as a policy for `spec`. Its observation mask
/// comes from the checkpoint.
pub fn load_policy(dir: &Path, name: &str, spec: &EnvSpec) -> Result<TrainedPolicy, SessionError> {
    let bad_name = name.is_empty() || name.starts_with('.') || name.contains(['/', '\\']);
    if bad_name {
        return Err(SessionError::Invalid(format!("bad checkpoint name `{name}`")));
    }
    let path = dir.join(format!("{name}.json"));
    let invalid = |e: &dyn std::fmt::Display| SessionError::Invalid(format!("checkpoint `{name}`: {e}"));
    let ck = Checkpoint::load(&path).map_err(|e| invalid(&e))?;
    ck.check_env(spec).map_err(|e| invalid(&e))?;
    let params = ck.policy().map_err(|e| invalid(&e))?;
    TrainedPolicy::new(params, spec.kind, ck.known).map_err(|e| invalid(&e))
}

type Member = Arc<TrainedPolicy>;

pub struct SessionState {
    id: String,
    spec: EnvSpec,
    seed: u64,
    level: LevelSpec,
    names: Vec<String>,
    ensemble: FusionEnsemble<Member>,
    opponent: ExpertKind,
    state: GridState,
    rng: Rng,
    log: Vec<StepRecord>,
    totals: RewardVector,
}

impl SessionState {
    /// `names` labels the main policy followed by each sub-policy. Fusion
    /// starts as EW with every sub active.
    pub fn new(
        id: String,
        spec: EnvSpec,
        seed: u64,
        main: Member,
        subs: Vec<Member>,
        names: Vec<String>,
    ) -> Result<Self, SessionError> {
        if names.len() != subs.len() + 1 {
            return Err(SessionError::Invalid("one name per policy".into()));
        }
        let ensemble = FusionEnsemble::new(main, subs, FusionMethod::EntropyWeighted, 0.0)?;
        let level = session_level(&spec, seed)?;
        Ok(Self {
            id,
            state: GridState::reset(&level, spec.step_cap),
            spec,
            seed,
            level,
            names,
            ensemble,
            opponent: ExpertKind::RandomOpponent,
            rng: session_rng(seed),
            log: Vec::new(),
            totals: RewardVector::default(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn ensemble(&self) -> &FusionEnsemble<Member> {
        &self.ensemble
    }

    /// Takes effect from the next step. Nothing changes on error.
    pub fn set_fusion(&mut self, method: FusionMethod, epsilon: f64, active: Vec<bool>) -> Result<(), SessionError> {
        if active.len() != self.ensemble.subs().len() {
            return Err(SessionError::Invalid(format!(
                "active mask has {} entries for {} sub-policies",
                active.len(),
                self.ensemble.subs().len()
            )));
        }
        self.ensemble.set_epsilon(epsilon)?;
        self.ensemble.set_active(active)?;
        self.ensemble.set_method(method);
        Ok(())
    }

    /// Restarts the episode, on a new level when `seed` is given.
    pub fn reset(&mut self, seed: Option<u64>) -> Result<(), SessionError> {
        if let Some(s) = seed {
            self.level = session_level(&self.spec, s)?;
            self.seed = s;
        }
        self.state = GridState::reset(&self.level, self.spec.step_cap);
        self.rng = session_rng(self.seed);
        self.log.clear();
        self.totals = RewardVector::default();
        Ok(())
    }

    /// One environment step. Draws from the rng in the same order as an
    /// evaluation episode: agent action, then opponent action.
    pub fn step(&mut self) -> Result<&StepRecord, SessionError> {
        if self.state.done {
            return Err(SessionError::Finished);
        }
        let trace = self.ensemble.trace(&self.state)?;
        let action = sample_action(&trace.fused.distribution, &mut self.rng);
        let opponent_action = match self.state.kind {
            EnvKind::ArenaWorld => Some(
                self.opponent
                    .act(&self.state.swapped(), &mut self.rng)
                    .map_err(|e| SessionError::Invalid(e.to_string()))?,
            ),
            EnvKind::CollectWorld => None,
        };
        let res = self
            .state
            .step(action, opponent_action, StepMode::Terminal)
            .map_err(|e| SessionError::Invalid(e.to_string()))?;
        self.totals.accumulate(&res.rewards);

        let active = self.ensemble.active();
        let mut policies = vec![view(&self.names[0], true, Some(&trace.main))];
        for (i, d) in trace.subs.iter().enumerate() {
            policies.push(view(&self.names[i + 1], active[i], active[i].then_some(d)));
        }
        self.log.push(StepRecord {
            step: self.log.len(),
            fusion: self.settings(),
            policies,
            k_star: trace.fused.k_star.map(|(k, _)| k),
            fell_back: trace.fused.fell_back,
            fused: trace.fused.distribution.into_inner(),
            action,
            opponent_action,
            rewards: self.channels(&res.rewards),
            events: res.events,
        });
        Ok(self.log.last().expect("just pushed"))
    }

    fn settings(&self) -> FusionSettings {
        FusionSettings {
            method: self.ensemble.method(),
            epsilon: self.ensemble.epsilon(),
            active: self.ensemble.active().to_vec(),
        }
    }

    fn channels(&self, r: &RewardVector) -> BTreeMap<String, f64> {
        self.spec
            .kind
            .channels()
            .iter()
            .map(|&c| (c.name().to_string(), r.get(c)))
            .collect()
    }

    pub fn snapshot(&self, running: bool) -> Snapshot {
        let s = &self.state;
        let cells = |mask: &[bool]| -> Vec<Pos> {
            (0..s.size * s.size)
                .filter(|&i| mask[i])
                .map(|i| Pos {
                    x: (i % s.size) as i32,
                    y: (i / s.size) as i32,
                })
                .collect()
        };
        Snapshot {
            session: self.id.clone(),
            env: self.spec.kind,
            flags: self.spec.flags,
            seed: self.seed,
            step: s.step,
            done: s.done,
            outcome: s.outcome,
            grid: GridView {
                size: s.size,
                walls: cells(&s.walls),
                death_tiles: cells(&s.death),
                objects: s.objects.clone(),
                agent: s.agent,
                opponent: s.opponent,
            },
            fusion: self.settings(),
            policies: self.names.clone(),
            last: self.log.last().cloned(),
            totals: self.channels(&self.totals),
            running,
        }
    }
}

fn view(name: &str, active: bool, d: Option<&ActionDistribution>) -> PolicyView {
    PolicyView {
        name: name.to_string(),
        active,
        distribution: d.map(|d| d.probs().to_vec()),
        entropy: d.map(|d| normalized_entropy(d).value()),
    }
}

impl std::fmt::Debug for SessionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionState")
            .field("id", &self.id)
            .field("seed", &self.seed)
            .field("step", &self.state.step)
            .field("ensemble", &self.ensemble)
            .finish()
    }
}
