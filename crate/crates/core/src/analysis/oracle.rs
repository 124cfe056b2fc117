//! Monte Carlo estimate of a critic's prediction error on gapworld-style
//! levels, where the policy is recurrent and exact evaluation is out of
//! reach.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::diffcore::LstmState;
use crate::envs::{step, LevelHandle};
use crate::models::ActorCritic;
use crate::seed::{component_rng, derive_seed, rng_from_seed, Rng as SeedRng};
use crate::train::evaluate_detailed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Episodes whose visited states are candidates.
    pub episodes: usize,
    /// States kept per episode (fewer when the episode is shorter).
    pub states_per_episode: usize,
    /// Continuation rollouts per kept state.
    pub rollouts: usize,
    /// Step cap for each continuation.
    pub horizon: usize,
    /// Continuations stepped together in one network call.
    pub batch: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { episodes: 100, states_per_episode: 4, rollouts: 32, horizon: 500, batch: 256, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrorReport {
    /// Mean of `(Ḡ − V̂)² − s²/K`: unbiased for `E[(V − V̂)²]`.
    pub mse: f64,
    /// Mean of `(Ḡ − V̂)²` without the sampling-noise correction.
    pub mse_raw: f64,
    /// Mean `s²/K` removed by the correction.
    pub noise: f64,
    pub n_states: usize,
}

struct Continuation {
    probe: usize,
    level: usize,
    state: usize,
    recurrent: LstmState<f64>,
    rng: SeedRng,
    ret: f64,
    discount: f64,
    done: bool,
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

/// Estimates `E[(V^π(h_t, M) − V̂(h_t))²]` over states visited by the
/// network's own (sampled) policy. For each kept state the true value is
/// estimated from `rollouts` continuations that restart from the exact
/// environment state and recurrent state recorded there.
pub fn prediction_error_mc(
    net: &ActorCritic,
    levels: &[LevelHandle],
    cfg: &OracleConfig,
) -> Result<PredictionErrorReport, AnalysisError> {
    if cfg.rollouts < 2 || cfg.states_per_episode == 0 || cfg.batch == 0 {
        return Err(AnalysisError::InvalidInput("need at least two rollouts and one state per episode".into()));
    }
    let eps = evaluate_detailed(
        net,
        levels,
        cfg.episodes,
        derive_seed(cfg.seed, "oracle/episodes"),
        cfg.horizon,
        false,
        true,
    )?;
    let mut pick = component_rng(cfg.seed, "oracle/pick");
    // (level, env state, recurrent state, predicted value)
    let mut probes = Vec::new();
    for e in &eps {
        let k = cfg.states_per_episode.min(e.steps.len());
        let mut idx = sample(&mut pick, e.steps.len(), k).into_vec();
        idx.sort_unstable();
        for i in idx {
            let s = &e.steps[i];
            probes.push((e.level_id, s.env_state, s.recurrent.clone(), s.value));
        }
    }
    let mut returns = vec![Vec::with_capacity(cfg.rollouts); probes.len()];
    let jobs: Vec<(usize, usize)> = (0..probes.len()).flat_map(|p| (0..cfg.rollouts).map(move |k| (p, k))).collect();
    for group in jobs.chunks(cfg.batch) {
        let mut live: Vec<Continuation> = group
            .iter()
            .map(|&(p, k)| Continuation {
                probe: p,
                level: probes[p].0,
                state: probes[p].1,
                recurrent: probes[p].2.clone(),
                rng: rng_from_seed(derive_seed(cfg.seed, &format!("oracle/{p}/{k}"))),
                ret: 0.0,
                discount: 1.0,
                done: false,
            })
            .collect();
        for _ in 0..cfg.horizon {
            let active: Vec<usize> = (0..live.len()).filter(|&j| !live[j].done).collect();
            if active.is_empty() {
                break;
            }
            let obs: Vec<f64> = active.iter().flat_map(|&j| levels[live[j].level].observe(live[j].state)).collect();
            let states: Vec<LstmState<f64>> = active.iter().map(|&j| live[j].recurrent.clone()).collect();
            let outs = net.infer(&obs, &states)?;
            for (&j, o) in active.iter().zip(outs) {
                let c = &mut live[j];
                let level = &levels[c.level];
                let action = sample_action(&o.policy.log_probs, &mut c.rng);
                let res = step(level, c.state, action, &mut c.rng)?;
                c.ret += c.discount * res.transition.reward;
                c.discount *= level.gamma();
                c.state = res.next_state;
                c.recurrent = o.state;
                c.done = res.terminal;
            }
        }
        for c in live {
            returns[c.probe].push(c.ret);
        }
    }
    let k = cfg.rollouts as f64;
    let (mut mse, mut raw, mut noise) = (0.0, 0.0, 0.0);
    for (p, g) in probes.iter().zip(&returns) {
        let mean = g.iter().sum::<f64>() / k;
        let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let sq = (mean - p.3).powi(2);
        raw += sq;
        noise += var / k;
        mse += sq - var / k;
    }
    let n = probes.len() as f64;
    Ok(PredictionErrorReport { mse: mse / n, mse_raw: raw / n, noise: noise / n, n_states: probes.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::NetConfig;

    #[test]
    fn zero_network_error_matches_value_scale() {
        // A zero network predicts 0 everywhere and acts uniformly, so the
        // estimate must be close to the mean squared true value.
        let net =
            ActorCritic::zeros(NetConfig::new(15, 2, crate::models::HeadKind::Baseline).with_sizes(4, 4)).unwrap();
        let levels = vec![LevelHandle::gapworld(0, 8).unwrap()];
        let cfg = OracleConfig { episodes: 10, states_per_episode: 2, rollouts: 64, horizon: 200, batch: 128, seed: 1 };
        let r = prediction_error_mc(&net, &levels, &cfg).unwrap();
        assert!(r.mse_raw >= r.mse);
        assert!(r.n_states > 0 && r.mse.is_finite());
    }
}
