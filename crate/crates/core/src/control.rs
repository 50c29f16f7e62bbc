//! Anything that can pick an action for the agent seat of a [`GridState`]:
//! scripted experts, trained policies and fusion ensembles.

use std::sync::Arc;

use crate::fusion::{sample_action, ActionDistribution, FusionEnsemble, PolicyHandle};
use crate::gridworld::{encode, scripted_action, EnvKind, ExpertKind, FeatureSet, GridState};
use crate::rng::Rng;
use crate::trainer::{Architecture, PolicyParams, TrainerError};

pub trait Controller: Send + Sync {
    fn act(&self, state: &GridState, rng: &mut Rng) -> Result<usize, TrainerError>;
}

impl Controller for ExpertKind {
    fn act(&self, state: &GridState, rng: &mut Rng) -> Result<usize, TrainerError> {
        Ok(scripted_action(*self, state, rng)?)
    }
}

impl<C: Controller + ?Sized> Controller for Arc<C> {
    fn act(&self, state: &GridState, rng: &mut Rng) -> Result<usize, TrainerError> {
        (**self).act(state, rng)
    }
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn act(&self, state: &GridState, rng: &mut Rng) -> Result<usize, TrainerError> {
        (**self).act(state, rng)
    }
}

/// A policy network bound to the observation encoding it was trained on.
/// `known` lists the design features it can see; anything else is masked.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPolicy {
    params: PolicyParams,
    kind: EnvKind,
    known: FeatureSet,
}

impl TrainedPolicy {
    pub fn new(params: PolicyParams, kind: EnvKind, known: FeatureSet) -> Result<Self, TrainerError> {
        check_descriptor(params.arch(), params.num_actions(), kind)?;
        Ok(Self { params, kind, known })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn known(&self) -> FeatureSet {
        self.known
    }

    pub fn with_known(mut self, known: FeatureSet) -> Self {
        self.known = known;
        self
    }
}

/// Whether a network of `arch` with `actions` outputs fits `kind`'s encoding.
pub fn check_descriptor(arch: &Architecture, actions: usize, kind: EnvKind) -> Result<(), TrainerError> {
    if actions != kind.num_actions() {
        return Err(TrainerError::DescriptorMismatch(format!(
            "{actions} policy outputs but {kind} has {} actions",
            kind.num_actions()
        )));
    }
    let ok = match arch {
        Architecture::Tabular { states } => *states == kind.state_count(),
        Architecture::Mlp { layers } => layers[0] == kind.feature_dim(),
    };
    if ok {
        Ok(())
    } else {
        Err(TrainerError::DescriptorMismatch(format!("{arch:?} does not fit {kind}")))
    }
}

impl PolicyHandle for TrainedPolicy {
    type Input = GridState;

    fn num_actions(&self) -> usize {
        self.params.num_actions()
    }

    fn distribution(&self, state: &GridState) -> ActionDistribution {
        debug_assert_eq!(state.kind, self.kind);
        self.params
            .forward(&encode(state, self.known))
            .expect("descriptor checked at construction")
    }
}

impl Controller for TrainedPolicy {
    fn act(&self, state: &GridState, rng: &mut Rng) -> Result<usize, TrainerError> {
        Ok(sample_action(&self.distribution(state), rng))
    }
}

impl<P> Controller for FusionEnsemble<P>
where
    P: PolicyHandle<Input = GridState> + Send + Sync,
{
    fn act(&self, state: &GridState, rng: &mut Rng) -> Result<usize, TrainerError> {
        Ok(sample_action(&self.fused_distribution(state)?, rng))
    }
}
