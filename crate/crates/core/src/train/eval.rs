use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::diffcore::LstmState;
use crate::envs::{spl, step, EpisodeOutcome, LevelHandle};
use crate::models::ActorCritic;
use crate::seed::{derive_seed, rng_from_seed, Rng as SeedRng};

/// Episodes evaluated side by side in one network call.
const LOCKSTEP: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStep {
    pub env_state: usize,
    /// Recurrent state going into this step.
    pub recurrent: LstmState<f64>,
    pub value: f64,
    pub alpha: Option<Vec<f64>>,
    pub action: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub level_id: usize,
    pub total_reward: f64,
    pub discounted_return: f64,
    pub length: usize,
    pub success: bool,
    pub truncated: bool,
    pub optimal_len: Option<usize>,
    /// Per-step records, when requested.
    pub steps: Vec<EvalStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    /// Mean undiscounted episode reward.
    pub mean_total_reward: f64,
    pub success_rate: f64,
    /// Present when every level defines a shortest path.
    pub spl: Option<f64>,
    pub mean_length: f64,
}

fn pick<R: Rng + ?Sized>(log_probs: &[f64], greedy: bool, rng: &mut R) -> usize {
    if greedy {
        let mut best = 0;
        for (a, &lp) in log_probs.iter().enumerate() {
            if lp > log_probs[best] {
                best = a;
            }
        }
        return best;
    }
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

/// Plays `episodes` episodes, episode `k` on level `k mod |levels|` with an
/// rng derived from `(seed, k)`, so results do not depend on how episodes
/// are grouped. Actions are sampled, or the most likely action when
/// `greedy`.
pub fn evaluate_detailed(
    net: &ActorCritic,
    levels: &[LevelHandle],
    episodes: usize,
    seed: u64,
    horizon: usize,
    greedy: bool,
    record_steps: bool,
) -> Result<Vec<EvalEpisode>, TrainError> {
    if episodes == 0 {
        return Err(TrainError::Config("evaluation needs at least one episode".into()));
    }
    if levels.is_empty() {
        return Err(TrainError::EmptyLevelSet);
    }
    let cfg = *net.config();
    if levels.iter().any(|l| l.obs_dim() != cfg.obs_dim || l.n_actions() != cfg.n_actions) {
        return Err(TrainError::Config("level set does not match the network's observation/action sizes".into()));
    }
    let mut out = Vec::with_capacity(episodes);
    let ids: Vec<usize> = (0..episodes).collect();
    for group in ids.chunks(LOCKSTEP) {
        struct Live {
            ep: EvalEpisode,
            rng: SeedRng,
            state: usize,
            recurrent: LstmState<f64>,
            discount: f64,
            finished: bool,
        }
        let mut live: Vec<Live> = group
            .iter()
            .map(|&k| {
                let level_id = k % levels.len();
                let mut rng = rng_from_seed(derive_seed(seed, &format!("eval/{k}")));
                let state = levels[level_id].sample_start(&mut rng);
                Live {
                    ep: EvalEpisode {
                        level_id,
                        total_reward: 0.0,
                        discounted_return: 0.0,
                        length: 0,
                        success: false,
                        truncated: false,
                        optimal_len: levels[level_id].optimal_len(),
                        steps: Vec::new(),
                    },
                    rng,
                    state,
                    recurrent: LstmState::zeros(cfg.lstm_hidden),
                    discount: 1.0,
                    finished: false,
                }
            })
            .collect();
        for t in 0..horizon {
            let active: Vec<usize> = (0..live.len()).filter(|&j| !live[j].finished).collect();
            if active.is_empty() {
                break;
            }
            let obs: Vec<f64> =
                active.iter().flat_map(|&j| levels[live[j].ep.level_id].observe(live[j].state)).collect();
            let states: Vec<LstmState<f64>> = active.iter().map(|&j| live[j].recurrent.clone()).collect();
            let outs = net.infer(&obs, &states)?;
            for (&j, o) in active.iter().zip(outs) {
                let e = &mut live[j];
                let level = &levels[e.ep.level_id];
                let action = pick(&o.policy.log_probs, greedy, &mut e.rng);
                let res = step(level, e.state, action, &mut e.rng)?;
                let reward = res.transition.reward;
                if record_steps {
                    e.ep.steps.push(EvalStep {
                        env_state: e.state,
                        recurrent: std::mem::replace(&mut e.recurrent, o.state),
                        value: o.critic.value,
                        alpha: o.critic.alpha,
                        action,
                        reward,
                    });
                } else {
                    e.recurrent = o.state;
                }
                e.ep.total_reward += reward;
                e.ep.discounted_return += e.discount * reward;
                e.discount *= level.gamma();
                e.ep.length += 1;
                e.state = res.next_state;
                if res.terminal {
                    e.finished = true;
                    e.ep.success = level.is_success(e.state);
                } else if t + 1 == horizon {
                    e.finished = true;
                    e.ep.truncated = true;
                }
            }
        }
        out.extend(live.into_iter().map(|l| l.ep));
    }
    Ok(out)
}

pub fn summarize(episodes: &[EvalEpisode]) -> Result<EvalReport, TrainError> {
    if episodes.is_empty() {
        return Err(TrainError::Config("no episodes to summarise".into()));
    }
    let n = episodes.len() as f64;
    let outcomes: Option<Vec<EpisodeOutcome>> = episodes
        .iter()
        .map(|e| {
            e.optimal_len.map(|optimal_len| EpisodeOutcome {
                success: e.success,
                path_len: e.length,
                optimal_len,
                total_reward: e.total_reward,
            })
        })
        .collect();
    let spl = match outcomes {
        Some(o) => Some(spl(&o)?.spl),
        None => None,
    };
    Ok(EvalReport {
        episodes: episodes.len(),
        mean_total_reward: episodes.iter().map(|e| e.total_reward).sum::<f64>() / n,
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
        spl,
        mean_length: episodes.iter().map(|e| e.length as f64).sum::<f64>() / n,
    })
}

pub fn evaluate(
    net: &ActorCritic,
    levels: &[LevelHandle],
    episodes: usize,
    seed: u64,
    horizon: usize,
    greedy: bool,
) -> Result<EvalReport, TrainError> {
    summarize(&evaluate_detailed(net, levels, episodes, seed, horizon, greedy, false)?)
}
