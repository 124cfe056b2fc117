//! Multi-scene reinforcement-learning laboratory built around dynamic value
//! estimation: a critic head that mixes a small set of basis value estimates
//! with posterior weights inferred from the trajectory so far.
//!
//! Modules:
//! - [`diffcore`]: tape-based reverse-mode differentiation, LSTM cell, Adam.
//! - [`envs`]: tabular and procedural multiple-MDP level families, Bellman
//!   solvers, navigation metrics.
//! - [`models`]: recurrent actor-critic with baseline, dynamic and control
//!   critic heads; confusion and contribution scores; checkpoints.
//! - [`train`]: rollouts, advantage estimation, PPO/A2C, diagnostics.
//! - [`analysis`]: per-level value estimation, mixture fitting and AIC model
//!   selection, variance decomposition, exact baseline-invariance checks.
//!
//! The numeric kernels are generic over [`Scalar`] (`f32`/`f64`); the
//! aliases below fix them to `f64`, which is what the training and analysis
//! pipelines use.

pub mod analysis;
pub mod diffcore;
pub mod envs;
pub mod models;
mod scalar;
pub mod seed;
pub mod train;

pub use scalar::Scalar;

pub type Tape64 = diffcore::Tape<f64>;
pub type ParamStore64 = diffcore::ParamStore<f64>;
pub type Adam64 = diffcore::Adam<f64>;
pub type LstmState64 = diffcore::LstmState<f64>;
pub type MdpSpec64 = envs::MdpSpec<f64>;
pub type GmmFit64 = analysis::GmmFit<f64>;
