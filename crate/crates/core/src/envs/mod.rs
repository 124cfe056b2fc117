//! Multiple-MDP level families, exact Bellman solvers and navigation metrics.
//!
//! Two families share the [`MdpSpec`] representation: small dense tabular
//! MDPs, solvable exactly, and seeded one-dimensional platformer levels
//! ("gapworld") whose obstacle density differs between two archetypes.

pub mod gapworld;
mod level;
mod mdp;
mod metrics;
mod solve;
pub mod tabular;

use thiserror::Error;

pub use level::{
    generate_level, parse_level_set, run_episode, step, EpisodeTrace, Family, LevelHandle, LevelRecord, StepResult,
    Transition, DEFAULT_HORIZON,
};
pub use mdp::{MdpSpec, Policy};
pub use metrics::{spl, EpisodeOutcome, NavReport};
pub use solve::{discounted_occupancy, evaluate_policy, q_from_values, solve_q, solve_value, Evaluation, MAX_SWEEPS};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid MDP: {0}")]
    InvalidSpec(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("{what} did not converge within {sweeps} sweeps")]
    NoConvergence { what: &'static str, sweeps: usize },
    #[error("unknown level family `{0}` (expected `tabular` or `gapworld`)")]
    UnknownFamily(String),
    #[error("cannot step from terminal state {0}")]
    TerminalStep(usize),
    #[error("state {state} out of range for a level with {n_states} states")]
    InvalidState { state: usize, n_states: usize },
    #[error("action {action} out of range for {n_actions} actions")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("no episodes to summarise")]
    EmptyEpisodes,
    #[error("invalid episode record: {0}")]
    InvalidEpisode(String),
    #[error("invalid level set `{0}`")]
    InvalidLevelSet(String),
    #[error("level record: {0}")]
    Record(String),
}
