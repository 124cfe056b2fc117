use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{a2c_update, collect_rollouts, compute_returns_advantages, ppo_update, Algorithm, TrainConfig, TrainError};
use super::{UpdateStats, WorkerState};
use crate::diffcore::Adam;
use crate::envs::LevelHandle;
use crate::models::{confusion, ActorCritic, Checkpoint, NetConfig};
use crate::seed::{component_rng, derive_seed, rng_from_seed};

/// Column order of the per-update metrics CSV.
pub const METRICS_COLUMNS: [&str; 10] = [
    "step",
    "mean_episode_reward",
    "policy_loss",
    "value_loss",
    "entropy",
    "kl_old_new",
    "sample_variance_psi2",
    "kappa_estimate",
    "clip_fraction",
    "mean_confusion",
];

/// Completed episodes averaged into `mean_episode_reward`.
const REWARD_WINDOW: usize = 100;

/// One metrics CSV row. `mean_confusion` is empty unless the critic is the
/// dynamic head; `mean_episode_reward` is NaN until an episode finishes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub mean_episode_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl_old_new: f64,
    pub sample_variance_psi2: f64,
    pub kappa_estimate: f64,
    pub clip_fraction: f64,
    pub mean_confusion: Option<f64>,
}

/// Everything besides the network needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub update: u64,
    pub env_steps: u64,
    pub adam: Adam<f64>,
    pub workers: Vec<WorkerState>,
    pub recent_rewards: Vec<f64>,
}

/// Owns the live network and runs rollout/update iterations.
///
/// All randomness comes from the master seed: initial weights from the
/// `init` component, worker `w` in update `u` from `rollout/w/u`, and the
/// update's subsampling and shuffling from `update/u`.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    net: ActorCritic,
    adam: Adam<f64>,
    levels: Vec<LevelHandle>,
    seed: u64,
    workers: Vec<WorkerState>,
    update: u64,
    env_steps: u64,
    recent: VecDeque<f64>,
}

impl Trainer {
    pub fn new(net_cfg: NetConfig, cfg: TrainConfig, levels: Vec<LevelHandle>, seed: u64) -> Result<Self, TrainError> {
        let net = ActorCritic::new(net_cfg, &mut component_rng(seed, "init"))?;
        Self::with_network(net, cfg, levels, seed)
    }

    pub fn with_network(
        net: ActorCritic,
        cfg: TrainConfig,
        levels: Vec<LevelHandle>,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if levels.is_empty() {
            return Err(TrainError::EmptyLevelSet);
        }
        let adam = Adam::new(cfg.lr, net.params());
        let workers = vec![WorkerState::new(net.config().lstm_hidden); cfg.n_workers];
        Ok(Trainer { cfg, net, adam, levels, seed, workers, update: 0, env_steps: 0, recent: VecDeque::new() })
    }

    pub fn network(&self) -> &ActorCritic {
        &self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn levels(&self) -> &[LevelHandle] {
        &self.levels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn updates(&self) -> u64 {
        self.update
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// One rollout phase followed by one PPO or A2C update.
    pub fn iterate(&mut self) -> Result<(MetricsRow, UpdateStats), TrainError> {
        let u = self.update;
        let seeds: Vec<u64> =
            (0..self.cfg.n_workers).map(|w| derive_seed(self.seed, &format!("rollout/{w}/{u}"))).collect();
        let mut batch = collect_rollouts(
            &self.net,
            &self.levels,
            &mut self.workers,
            self.cfg.steps_per_worker,
            &seeds,
            self.cfg.horizon,
        )?;
        compute_returns_advantages(&mut batch, self.cfg.gamma, self.cfg.gae_lambda)?;
        let mut rng = rng_from_seed(derive_seed(self.seed, &format!("update/{u}")));
        let stats = match self.cfg.algorithm {
            Algorithm::Ppo => ppo_update(&mut self.net, &mut self.adam, &batch, &self.cfg, &mut rng)?,
            Algorithm::A2c => a2c_update(&mut self.net, &mut self.adam, &batch, &self.cfg, &mut rng)?,
        };
        self.update += 1;
        self.env_steps += batch.len() as u64;
        for ep in &batch.episodes {
            if self.recent.len() == REWARD_WINDOW {
                self.recent.pop_front();
            }
            self.recent.push_back(ep.total_reward);
        }
        let mean_confusion = match (&batch.alpha, self.net.head().n_basis()) {
            (Some(alpha), Some(k)) => {
                let deltas: Result<Vec<f64>, _> = alpha.chunks(k).map(confusion).collect();
                let deltas = deltas?;
                Some(deltas.iter().sum::<f64>() / deltas.len() as f64)
            }
            _ => None,
        };
        let mean_episode_reward =
            if self.recent.is_empty() { f64::NAN } else { self.recent.iter().sum::<f64>() / self.recent.len() as f64 };
        let row = MetricsRow {
            step: self.env_steps,
            mean_episode_reward,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            kl_old_new: stats.kl_old_new,
            sample_variance_psi2: stats.sample_variance_psi2,
            kappa_estimate: stats.kappa_estimate,
            clip_fraction: stats.clip_fraction,
            mean_confusion,
        };
        Ok((row, stats))
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            update: self.update,
            env_steps: self.env_steps,
            adam: self.adam.clone(),
            workers: self.workers.clone(),
            recent_rewards: self.recent.iter().copied().collect(),
        }
    }

    /// Network plus trainer state, ready to be written to disk.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(&self.net, self.seed, self.env_steps, self.update);
        ckpt.trainer_state = Some(serde_json::to_value(self.state()).expect("trainer state always serialises"));
        ckpt
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    /// `cfg` and `levels` must be the ones the run started with.
    pub fn resume(ckpt: &Checkpoint, cfg: TrainConfig, levels: Vec<LevelHandle>) -> Result<Self, TrainError> {
        let net = ckpt.network()?;
        let raw =
            ckpt.trainer_state.clone().ok_or_else(|| TrainError::State("checkpoint has no trainer state".into()))?;
        let state: TrainerState = serde_json::from_value(raw).map_err(|e| TrainError::State(e.to_string()))?;
        let mut trainer = Self::with_network(net, cfg, levels, ckpt.header.seed)?;
        if state.workers.len() != trainer.cfg.n_workers {
            return Err(TrainError::State(format!(
                "checkpoint has {} workers, config asks for {}",
                state.workers.len(),
                trainer.cfg.n_workers
            )));
        }
        if state.workers.iter().any(|w| w.level.is_some_and(|l| l >= trainer.levels.len())) {
            return Err(TrainError::State("worker refers to a level outside the level set".into()));
        }
        trainer.update = state.update;
        trainer.env_steps = state.env_steps;
        trainer.adam = state.adam;
        trainer.adam.lr = trainer.cfg.lr;
        trainer.workers = state.workers;
        trainer.recent = state.recent_rewards.into();
        Ok(trainer)
    }
}
