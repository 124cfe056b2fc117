//! Rollout collection, advantage estimation, PPO and A2C updates, and the
//! training diagnostics (KL between successive policies, the sample
//! variance of advantages, and the mean squared score-function norm κ).
//!
//! Updates re-run the network one step at a time from the recurrent state
//! recorded during the rollout, so gradients do not flow back through time
//! beyond the current step.

mod advantage;
mod config;
mod eval;
mod rollout;
mod trainer;
mod update;

use thiserror::Error;

use crate::diffcore::DiffError;
use crate::envs::EnvError;
use crate::models::ModelError;

pub use advantage::{compute_returns_advantages, gae};
pub use config::{Algorithm, TrainConfig};
pub use eval::{evaluate, evaluate_detailed, summarize, EvalEpisode, EvalReport, EvalStep};
pub use rollout::{collect_rollouts, CompletedEpisode, RolloutBatch, WorkerState};
pub use trainer::{MetricsRow, Trainer, TrainerState, METRICS_COLUMNS};
pub use update::{
    a2c_update, kappa_estimate, kl_divergence, kl_old_new, loss_gradient, mean_square, ppo_update,
    sample_variance_psi2, LossConfig, UpdateStats,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("rollouts need at least one worker")]
    NoWorkers,
    #[error("rollouts need at least one step per worker")]
    NoSteps,
    #[error("level set is empty")]
    EmptyLevelSet,
    #[error("expected one rng seed per worker ({workers}), got {seeds}")]
    SeedCount { workers: usize, seeds: usize },
    #[error("{name} must lie in [0, 1], got {value}")]
    OutOfUnitRange { name: &'static str, value: f64 },
    #[error("batch has no advantages; run compute_returns_advantages first")]
    MissingAdvantages,
    #[error("non-finite {what} at update {update}; parameters restored")]
    NonFinite { what: &'static str, update: u64 },
    #[error("trainer state: {0}")]
    State(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}
