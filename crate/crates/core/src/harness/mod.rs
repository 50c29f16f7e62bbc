//! Experiment orchestration: evaluation, use-cases, reports and the
//! interactive session server.

pub mod eval;
pub mod protocol;
pub mod report;
pub mod server;
pub mod session;
pub mod usecase;

pub use eval::{
    evaluate_rewards, head_to_head, play_episode, play_scored_episode, run_episodes, run_scored_episodes, style_stats,
    wilson_interval, ChannelStats, ScoredEpisode, StepScorer, StyleStats, WinStats, Z_95,
};
pub use report::{
    normalize_rewards, write_artifacts, Baseline, Budget, ChannelResult, ConfigResult, ExperimentSpec, JobKind,
    LedgerEntry, MetricsReport, Normalizer, TrainingJob, TrainingLedger, UseCase, REPORT_FORMAT_VERSION,
    SPEC_FORMAT_VERSION,
};
pub use server::{serve, Server};
pub use session::{SessionError, SessionState};
pub use usecase::run_use_case;

use thiserror::Error;

use crate::fusion::FusionError;
use crate::gridworld::GridError;
use crate::persist::PersistError;
use crate::trainer::TrainerError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("normalizer for {channel} is {value}, must be positive")]
    DegenerateNormalizer { channel: String, value: f64 },
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}
