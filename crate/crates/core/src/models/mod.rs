//! Recurrent actor-critic network with interchangeable critic heads.
//!
//! Observations go through a one-layer tanh encoder and an LSTM cell; the
//! LSTM output is the shared feature vector for the actor (one affine layer
//! and a log-softmax) and for the critic. The critic is one of
//!
//! - `baseline`: one affine layer,
//! - `dynamic(N_b)`: posterior weights `α = softmax(affine(f))` over `N_b`
//!   basis values `μ = affine(f)`, with `V̂ = Σ α_i μ_i`,
//! - `control(N_c)`: a ReLU hidden layer of width `N_c`, sized so its
//!   parameter count matches the dynamic head when `N_c = 2 N_b`.

mod checkpoint;
mod config;
mod net;
mod scores;

use thiserror::Error;

use crate::diffcore::DiffError;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{head_param_count, HeadKind, NetConfig, PARITY_TOLERANCE};
pub use net::{ActorCritic, CriticNodes, CriticOutput, ForwardNodes, PolicyOutput, StepOutput};
pub use scores::{confusion, contribution};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("operation needs a {expected} head, network has {got}")]
    HeadMismatch { expected: &'static str, got: &'static str },
    #[error("observation has {got} entries, network expects {expected}")]
    ObsDim { expected: usize, got: usize },
    #[error("not a probability vector: {0}")]
    NotProbability(String),
    #[error("contribution needs at least one step")]
    EmptyTrace,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
