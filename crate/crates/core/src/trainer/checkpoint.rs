use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, PolicyParams, ValueParams};
use super::{PpoConfig, TrainerError};
use crate::gridworld::{EnvSpec, FeatureSet};
use crate::persist::{self, PersistError};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const KIND: &str = "policy-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub num_actions: usize,
    pub params: Vec<f64>,
    pub value_params: Vec<f64>,
    pub config: PpoConfig,
    pub master_seed: u64,
    pub env_fingerprint: String,
    /// Design features the policy observed during training.
    pub known: FeatureSet,
    /// Environment steps consumed to produce these parameters.
    pub env_steps: u64,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        policy: &PolicyParams,
        value: &ValueParams,
        config: &PpoConfig,
        master_seed: u64,
        env: &EnvSpec,
        known: FeatureSet,
        env_steps: u64,
    ) -> Self {
        Self {
            architecture: policy.arch().clone(),
            num_actions: policy.num_actions(),
            params: policy.0.params.clone(),
            value_params: value.0.params.clone(),
            config: config.clone(),
            master_seed,
            env_fingerprint: env.fingerprint(),
            known,
            env_steps,
        }
    }

    pub fn policy(&self) -> Result<PolicyParams, TrainerError> {
        let mut p = super::Model::zeros(self.architecture.clone(), self.num_actions);
        if p.params.len() != self.params.len() {
            return Err(TrainerError::DescriptorMismatch(format!(
                "{} parameters for a descriptor needing {}",
                self.params.len(),
                p.params.len()
            )));
        }
        p.params.clone_from(&self.params);
        Ok(PolicyParams(p))
    }

    pub fn value(&self) -> Result<ValueParams, TrainerError> {
        let mut v = super::Model::zeros(self.architecture.clone(), 1);
        if v.params.len() != self.value_params.len() {
            return Err(TrainerError::DescriptorMismatch("value head size".into()));
        }
        v.params.clone_from(&self.value_params);
        Ok(ValueParams(v))
    }

    /// Fails unless the checkpoint was trained on `env`'s observation space.
    pub fn check_env(&self, env: &EnvSpec) -> Result<(), TrainerError> {
        if self.env_fingerprint != env.fingerprint() {
            return Err(TrainerError::DescriptorMismatch(format!(
                "checkpoint for {} used with {}",
                self.env_fingerprint,
                env.fingerprint()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, KIND, CHECKPOINT_FORMAT_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        persist::load(path, KIND, CHECKPOINT_FORMAT_VERSION)
    }
}
