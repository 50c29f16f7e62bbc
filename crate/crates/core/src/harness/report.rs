//! Experiment specs, metrics reports and their on-disk forms.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, StyleStats, WinStats};
use crate::fusion::FusionMethod;
use crate::gridworld::{EnvSpec, FeatureSet};
use crate::irl::AirlConfig;
use crate::persist::{self, PersistError};
use crate::trainer::PpoConfig;

pub const SPEC_FORMAT_VERSION: u32 = 1;
pub const REPORT_FORMAT_VERSION: u32 = 1;
const SPEC_KIND: &str = "experiment-spec";
const REPORT_KIND: &str = "metrics-report";
const LEDGER_KIND: &str = "training-ledger";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UseCase {
    Enhance,
    Style,
    Adapt,
    #[serde(alias = "miniworld")]
    MiniworldAnalog,
}

impl fmt::Display for UseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().unwrap_or("use-case"))
    }
}

impl std::str::FromStr for UseCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown use-case `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    FromScratch,
    FineTune,
}

impl Baseline {
    pub fn id(self) -> &'static str {
        match self {
            Baseline::FromScratch => "from-scratch",
            Baseline::FineTune => "fine-tune",
        }
    }
}

/// Training settings for every job a use-case may run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct Budget {
    /// CollectWorld policies, baselines included.
    pub collect: PpoConfig,
    /// Arena main policy and the from-scratch baseline.
    pub arena: PpoConfig,
    pub arena_hidden: Vec<usize>,
    /// PPO inside DE-AIRL for arena sub-policies.
    pub sub: PpoConfig,
    pub airl: AirlConfig,
    /// Arena fine-tune iterations (with the `arena` settings otherwise).
    pub finetune_iterations: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            collect: PpoConfig {
                gamma: 0.9,
                learning_rate: 0.02,
                value_learning_rate: 0.02,
                minibatch_size: 512,
                rollout_length: 2048,
                iterations: 100,
                ..PpoConfig::default()
            },
            arena: PpoConfig {
                learning_rate: 3e-3,
                value_learning_rate: 3e-3,
                minibatch_size: 512,
                rollout_length: 4096,
                iterations: 400,
                ..PpoConfig::default()
            },
            arena_hidden: vec![64],
            sub: PpoConfig {
                learning_rate: 0.01,
                value_learning_rate: 0.01,
                minibatch_size: 512,
                rollout_length: 1024,
                iterations: 0,
                ..PpoConfig::default()
            },
            airl: AirlConfig {
                outer_iterations: 60,
                ..AirlConfig::default()
            },
            finetune_iterations: 50,
        }
    }
}

impl Budget {
    /// DE-AIRL settings for CollectWorld experts: the shaping discount
    /// follows the collect PPO discount and the sub-policy is deployed on
    /// ProcEnv for a short run against the frozen reward.
    pub fn collect_airl(&self) -> AirlConfig {
        AirlConfig {
            gamma: self.collect.gamma,
            deploy_iterations: 20,
            ..self.airl.clone()
        }
    }

    /// A few iterations of everything; exercises the plumbing only.
    pub fn smoke() -> Self {
        let d = Self::default();
        let small = |c: PpoConfig, iterations| PpoConfig {
            rollout_length: 256,
            minibatch_size: 128,
            iterations,
            ..c
        };
        Self {
            collect: small(d.collect, 2),
            arena: small(d.arena, 2),
            arena_hidden: vec![8],
            sub: small(d.sub, 0),
            airl: AirlConfig {
                outer_iterations: 1,
                k_rl: 1,
                ..d.airl
            },
            finetune_iterations: 1,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        for c in [&self.collect, &self.arena, &self.sub] {
            c.validate()?;
        }
        self.airl
            .validate()
            .map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
        if self.arena_hidden.contains(&0) {
            return Err(HarnessError::InvalidSpec("hidden layers must be non-empty".into()));
        }
        Ok(())
    }
}

fn default_methods() -> Vec<FusionMethod> {
    FusionMethod::ALL.to_vec()
}

fn default_episodes() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentSpec {
    pub use_case: UseCase,
    /// Design features of the evaluated environment; `None` picks the
    /// use-case default.
    #[serde(default)]
    pub flags: Option<FeatureSet>,
    /// Checkpoint cache. Policies found here are reused, missing ones are
    /// trained and written back.
    #[serde(default)]
    pub checkpoints: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<FusionMethod>,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    pub seed: u64,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub budget: Budget,
}

impl ExperimentSpec {
    /// Use-case defaults: all methods, 1,000 episodes, both baselines
    /// except for style.
    pub fn new(use_case: UseCase, seed: u64) -> Self {
        let baselines = match use_case {
            UseCase::Style => Vec::new(),
            _ => vec![Baseline::FromScratch, Baseline::FineTune],
        };
        Self {
            use_case,
            flags: None,
            checkpoints: None,
            methods: default_methods(),
            epsilon: 0.0,
            episodes: default_episodes(),
            seed,
            baselines,
            budget: Budget::default(),
        }
    }

    pub fn flags(&self) -> FeatureSet {
        self.flags.unwrap_or(match self.use_case {
            UseCase::Enhance | UseCase::Adapt => FeatureSet::ORB,
            UseCase::Style | UseCase::MiniworldAnalog => FeatureSet::NONE,
        })
    }

    pub fn env(&self) -> EnvSpec {
        match self.use_case {
            UseCase::MiniworldAnalog => EnvSpec::collect(),
            _ => EnvSpec::arena(self.flags()),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidSpec(m.to_string()));
        if self.episodes == 0 {
            return bad("episode count must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("no fusion method requested");
        }
        if !self.epsilon.is_finite() {
            return bad("epsilon must be finite");
        }
        let flags = self.flags();
        match self.use_case {
            UseCase::Style if !self.baselines.is_empty() => return bad("style has no reward to train baselines on"),
            UseCase::Adapt if flags == FeatureSet::NONE => return bad("adapt needs at least one new feature"),
            UseCase::Enhance if !flags.orb => return bad("enhance needs the orb"),
            UseCase::MiniworldAnalog if flags != FeatureSet::NONE => {
                return bad("CollectWorld has no design features")
            }
            _ => {}
        }
        self.budget.validate()
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, SPEC_KIND, SPEC_FORMAT_VERSION, self)
    }

    /// Reads a versioned spec document, or a bare spec object.
    pub fn load(path: &Path) -> Result<Self, PersistError> {
        let text = std::fs::read_to_string(path).map_err(|source| PersistError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        match persist::from_document(path, &text, SPEC_KIND, SPEC_FORMAT_VERSION) {
            Ok(spec) => Ok(spec),
            Err(e @ (PersistError::VersionMismatch { .. } | PersistError::Io { .. })) => Err(e),
            Err(e) => serde_json::from_str(&text).map_err(|_| e),
        }
    }
}

/// Specialist mean that one channel is divided by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Normalizer {
    pub channel: String,
    pub specialist: String,
    pub value: f64,
    /// The specialist mean was not positive; the channel is reported raw only.
    pub degenerate: bool,
}

/// Divides each raw channel mean by its normalizer.
pub fn normalize_rewards(raw: &[(String, f64)], table: &[Normalizer]) -> Result<Vec<(String, f64)>, HarnessError> {
    raw.iter()
        .map(|(channel, mean)| {
            let n = table
                .iter()
                .find(|n| &n.channel == channel)
                .ok_or_else(|| HarnessError::InvalidSpec(format!("no normalizer for {channel}")))?;
            if n.value.is_nan() || n.value <= 0.0 {
                return Err(HarnessError::DegenerateNormalizer {
                    channel: channel.clone(),
                    value: n.value,
                });
            }
            Ok((channel.clone(), mean / n.value))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ChannelResult {
    pub channel: String,
    pub mean: f64,
    pub normalized: Option<f64>,
}

/// Evaluation of one policy or ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ConfigResult {
    pub id: String,
    pub method: Option<FusionMethod>,
    pub epsilon: f64,
    /// Main policy first, then the fused sub-policies.
    pub policies: Vec<String>,
    pub channels: Vec<ChannelResult>,
    /// Sum of the environment channel means.
    pub combined: f64,
    /// Against the designated baseline opponent (arena only).
    pub win: Option<WinStats>,
    pub style: Option<StyleStats>,
    pub episodes: usize,
    pub seed: u64,
    /// Product fusions that fell back to the main policy.
    pub fallbacks: u64,
}

impl ConfigResult {
    pub fn channel(&self, name: &str) -> Option<&ChannelResult> {
        self.channels.iter().find(|c| c.channel == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobKind {
    Ppo,
    FineTune,
    DeAirl,
}

/// Deterministic cost of one training job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainingJob {
    pub role: String,
    pub kind: JobKind,
    pub env: EnvSpec,
    pub env_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MetricsReport {
    pub spec: ExperimentSpec,
    pub env: EnvSpec,
    /// How evaluation picks actions from a distribution.
    pub action_selection: String,
    /// Role whose policy plays the opponent seat in arena evaluations.
    pub opponent: String,
    pub normalizers: Vec<Normalizer>,
    /// Each policy on its own.
    pub members: Vec<ConfigResult>,
    /// Fusion configurations, then baselines.
    pub configurations: Vec<ConfigResult>,
    pub training: Vec<TrainingJob>,
    /// Costliest sub-policy over the main policy, in environment steps.
    pub cost_ratio: Option<f64>,
    pub partial: bool,
    pub failures: Vec<String>,
}

impl MetricsReport {
    pub fn config(&self, id: &str) -> Option<&ConfigResult> {
        self.configurations.iter().chain(&self.members).find(|c| c.id == id)
    }

    pub fn to_document(&self) -> Result<String, PersistError> {
        persist::to_document(REPORT_KIND, REPORT_FORMAT_VERSION, self)
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, REPORT_KIND, REPORT_FORMAT_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        persist::load(path, REPORT_KIND, REPORT_FORMAT_VERSION)
    }

    /// One row per configuration and channel.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        #[derive(Serialize)]
        #[serde(rename_all = "kebab-case")]
        struct Row<'a> {
            config_id: &'a str,
            method: &'a str,
            epsilon: f64,
            channel: &'a str,
            mean: f64,
            normalized: Option<f64>,
            win_rate: Option<f64>,
            ci_low: Option<f64>,
            ci_high: Option<f64>,
            episodes: usize,
            seed: u64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in self.members.iter().chain(&self.configurations) {
            for ch in &c.channels {
                w.serialize(Row {
                    config_id: &c.id,
                    method: c.method.map_or("none", |m| m.short_name()),
                    epsilon: c.epsilon,
                    channel: &ch.channel,
                    mean: ch.mean,
                    normalized: ch.normalized,
                    win_rate: c.win.map(|w| w.win_rate),
                    ci_low: c.win.map(|w| w.ci_low),
                    ci_high: c.win.map(|w| w.ci_high),
                    episodes: c.episodes,
                    seed: c.seed,
                })
                .map_err(csv_error)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| csv_error(e.into_error().into()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::InvalidSpec(e.to_string()))
    }
}

fn csv_error(e: csv::Error) -> HarnessError {
    HarnessError::InvalidSpec(format!("csv: {e}"))
}

/// Wall-clock side of the training cost. Kept out of the report so the
/// report stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LedgerEntry {
    pub role: String,
    pub env_steps: u64,
    /// `None` when the checkpoint came from the cache.
    pub wall_seconds: Option<f64>,
    pub cached: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainingLedger {
    pub entries: Vec<LedgerEntry>,
}

impl TrainingLedger {
    pub fn entry(&self, role: &str) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| e.role == role)
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, LEDGER_KIND, REPORT_FORMAT_VERSION, self)
    }
}

/// Writes `report.json`, `report.csv` and `ledger.json` under `dir`.
pub fn write_artifacts(report: &MetricsReport, ledger: &TrainingLedger, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| PersistError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    report.save(&dir.join("report.json"))?;
    persist::write_atomic(&dir.join("report.csv"), report.to_csv()?.as_bytes())?;
    ledger.save(&dir.join("ledger.json"))?;
    Ok(())
}
