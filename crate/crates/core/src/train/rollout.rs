use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::diffcore::LstmState;
use crate::envs::{step, LevelHandle};
use crate::models::{ActorCritic, StepOutput};
use crate::seed::{rng_from_seed, Rng as SeedRng};

/// Per-worker environment and recurrent state, carried across rollout
/// phases so episodes may span several updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    /// `None` until the worker starts its next episode.
    pub level: Option<usize>,
    pub env_state: usize,
    pub t: usize,
    pub recurrent: LstmState<f64>,
    pub episode_reward: f64,
    pub episode_discounted: f64,
    pub discount: f64,
}

impl WorkerState {
    pub fn new(hidden_size: usize) -> Self {
        WorkerState {
            level: None,
            env_state: 0,
            t: 0,
            recurrent: LstmState::zeros(hidden_size),
            episode_reward: 0.0,
            episode_discounted: 0.0,
            discount: 1.0,
        }
    }

    fn begin<R: Rng + ?Sized>(&mut self, levels: &[LevelHandle], rng: &mut R) {
        let idx = rng.random_range(0..levels.len());
        let hidden = self.recurrent.size();
        *self = WorkerState::new(hidden);
        self.level = Some(idx);
        self.env_state = levels[idx].sample_start(rng);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletedEpisode {
    pub level_id: usize,
    /// Undiscounted sum of rewards.
    pub total_reward: f64,
    pub discounted_return: f64,
    pub length: usize,
    pub success: bool,
    pub truncated: bool,
}

/// Transitions from all workers, stored worker-major: sample `w * T + t` is
/// step `t` of worker `w`. Matrices are row-major with one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub n_workers: usize,
    pub steps_per_worker: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub hidden_size: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_prob_old: Vec<f64>,
    /// Full old action distributions as log-probabilities, `N × A`.
    pub old_log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub value_pred: Vec<f64>,
    /// Episode ended after this step (absorbed or truncated).
    pub done: Vec<bool>,
    /// Episode was cut by the horizon after this step.
    pub truncated: Vec<bool>,
    pub level_id: Vec<usize>,
    pub env_state: Vec<usize>,
    /// Recurrent state fed into the network at each step, `N × H`.
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    /// Critic estimate of the state after the step, filled where a return
    /// must be bootstrapped: truncations and each worker's final step.
    pub next_value: Vec<f64>,
    /// Posterior weights of the dynamic head, `N × N_b`.
    pub alpha: Option<Vec<f64>>,
    pub returns: Vec<f64>,
    /// `returns − value_pred`, not normalised.
    pub advantages: Vec<f64>,
    /// Batch-standardised copy of `advantages`.
    pub normalized_advantages: Vec<f64>,
    pub episodes: Vec<CompletedEpisode>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn obs_row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn old_dist(&self, i: usize) -> &[f64] {
        &self.old_log_probs[i * self.n_actions..(i + 1) * self.n_actions]
    }

    pub fn state_row(&self, i: usize) -> LstmState<f64> {
        let h = self.hidden_size;
        LstmState { hidden: self.hidden[i * h..(i + 1) * h].to_vec(), cell: self.cell[i * h..(i + 1) * h].to_vec() }
    }

    pub fn has_advantages(&self) -> bool {
        self.advantages.len() == self.len() && !self.is_empty()
    }
}

fn sample_action<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return a;
        }
    }
    log_probs.len() - 1
}

/// Runs every worker for `steps_per_worker` steps with a read-only network,
/// sampling a level uniformly at each episode start.
///
/// Workers advance in lockstep so the network is evaluated once per step
/// for all of them; each worker draws only from its own rng, seeded from
/// `seeds[w]`, so the result depends on the seeds and the snapshot alone.
pub fn collect_rollouts(
    net: &ActorCritic,
    levels: &[LevelHandle],
    workers: &mut [WorkerState],
    steps_per_worker: usize,
    seeds: &[u64],
    horizon: usize,
) -> Result<RolloutBatch, TrainError> {
    if workers.is_empty() {
        return Err(TrainError::NoWorkers);
    }
    if steps_per_worker == 0 {
        return Err(TrainError::NoSteps);
    }
    if levels.is_empty() {
        return Err(TrainError::EmptyLevelSet);
    }
    if seeds.len() != workers.len() {
        return Err(TrainError::SeedCount { workers: workers.len(), seeds: seeds.len() });
    }
    let cfg = *net.config();
    if let Some(bad) = levels.iter().find(|l| l.obs_dim() != cfg.obs_dim || l.n_actions() != cfg.n_actions) {
        return Err(TrainError::Config(format!(
            "level {} has {} observations and {} actions, network expects {} and {}",
            bad.seed(),
            bad.obs_dim(),
            bad.n_actions(),
            cfg.obs_dim,
            cfg.n_actions
        )));
    }
    let (nw, t_max) = (workers.len(), steps_per_worker);
    let n = nw * t_max;
    let (d, a, h) = (cfg.obs_dim, cfg.n_actions, cfg.lstm_hidden);
    let nb = cfg.head.n_basis();
    let mut rngs: Vec<SeedRng> = seeds.iter().map(|&s| rng_from_seed(s)).collect();
    let mut b = RolloutBatch {
        n_workers: nw,
        steps_per_worker: t_max,
        obs_dim: d,
        n_actions: a,
        hidden_size: h,
        obs: vec![0.0; n * d],
        actions: vec![0; n],
        log_prob_old: vec![0.0; n],
        old_log_probs: vec![0.0; n * a],
        rewards: vec![0.0; n],
        value_pred: vec![0.0; n],
        done: vec![false; n],
        truncated: vec![false; n],
        level_id: vec![0; n],
        env_state: vec![0; n],
        hidden: vec![0.0; n * h],
        cell: vec![0.0; n * h],
        next_value: vec![0.0; n],
        alpha: nb.map(|k| vec![0.0; n * k]),
        returns: Vec::new(),
        advantages: Vec::new(),
        normalized_advantages: Vec::new(),
        episodes: Vec::new(),
    };

    let mut obs_buf = vec![0.0; nw * d];
    let mut states: Vec<LstmState<f64>> = Vec::with_capacity(nw);
    for t in 0..t_max {
        states.clear();
        for (w, worker) in workers.iter_mut().enumerate() {
            if worker.level.is_none() {
                worker.begin(levels, &mut rngs[w]);
            }
            let level = &levels[worker.level.unwrap()];
            obs_buf[w * d..(w + 1) * d].copy_from_slice(&level.observe(worker.env_state));
            states.push(worker.recurrent.clone());
        }
        let outs = net.infer(&obs_buf, &states)?;
        let mut pending: Vec<(usize, Vec<f64>, LstmState<f64>)> = Vec::new();
        for (w, (worker, out)) in workers.iter_mut().zip(outs).enumerate() {
            let i = w * t_max + t;
            let level_id = worker.level.unwrap();
            let level = &levels[level_id];
            let action = sample_action(&out.policy.log_probs, &mut rngs[w]);
            let result = step(level, worker.env_state, action, &mut rngs[w])?;

            b.obs[i * d..(i + 1) * d].copy_from_slice(&obs_buf[w * d..(w + 1) * d]);
            b.actions[i] = action;
            b.log_prob_old[i] = out.policy.log_probs[action];
            b.old_log_probs[i * a..(i + 1) * a].copy_from_slice(&out.policy.log_probs);
            b.rewards[i] = result.transition.reward;
            b.value_pred[i] = out.critic.value;
            b.level_id[i] = level_id;
            b.env_state[i] = worker.env_state;
            b.hidden[i * h..(i + 1) * h].copy_from_slice(&worker.recurrent.hidden);
            b.cell[i * h..(i + 1) * h].copy_from_slice(&worker.recurrent.cell);
            if let (Some(k), Some(alpha)) = (nb, out.critic.alpha.as_ref()) {
                b.alpha.as_mut().unwrap()[i * k..(i + 1) * k].copy_from_slice(alpha);
            }

            worker.episode_reward += result.transition.reward;
            worker.episode_discounted += worker.discount * result.transition.reward;
            worker.discount *= level.gamma();
            worker.t += 1;
            worker.env_state = result.next_state;
            worker.recurrent = out.state;
            let truncated = !result.terminal && worker.t >= horizon;
            b.done[i] = result.terminal || truncated;
            b.truncated[i] = truncated;
            if truncated || (t + 1 == t_max && !result.terminal) {
                pending.push((i, result.transition.next_obs, worker.recurrent.clone()));
            }
            if b.done[i] {
                b.episodes.push(CompletedEpisode {
                    level_id,
                    total_reward: worker.episode_reward,
                    discounted_return: worker.episode_discounted,
                    length: worker.t,
                    success: level.is_success(worker.env_state),
                    truncated,
                });
                worker.level = None;
            }
        }
        if !pending.is_empty() {
            let obs: Vec<f64> = pending.iter().flat_map(|(_, o, _)| o.iter().copied()).collect();
            let st: Vec<LstmState<f64>> = pending.iter().map(|(_, _, s)| s.clone()).collect();
            let outs: Vec<StepOutput> = net.infer(&obs, &st)?;
            for ((i, _, _), out) in pending.iter().zip(outs) {
                b.next_value[*i] = out.critic.value;
            }
        }
    }
    Ok(b)
}
