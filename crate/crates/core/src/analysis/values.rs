//! Per-level value functions under one shared policy.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AnalysisError;
use crate::diffcore::{Adam, LstmState, Shape, Tape};
use crate::envs::{solve_value, LevelHandle, Policy};
use crate::models::ActorCritic;
use crate::seed::{component_rng, derive_seed};
use crate::train::evaluate_detailed;

/// Values of `K` states in each of `N` levels, all under the policy named
/// by `policy_tag`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueMatrix {
    pub n_levels: usize,
    pub n_states: usize,
    /// `N × K`, row-major.
    pub values: Vec<f64>,
    /// Seed of the level behind each row.
    pub level_ids: Vec<u64>,
    /// Column labels: environment state indices for the exact variant,
    /// probe indices for the fine-tuned variant.
    pub state_ids: Vec<usize>,
    pub policy_tag: String,
}

impl ValueMatrix {
    pub fn new(
        values: Vec<f64>,
        level_ids: Vec<u64>,
        state_ids: Vec<usize>,
        policy_tag: impl Into<String>,
    ) -> Result<Self, AnalysisError> {
        let (n, k) = (level_ids.len(), state_ids.len());
        if n == 0 || k == 0 || values.len() != n * k {
            return Err(AnalysisError::InvalidInput(format!(
                "value matrix needs {n} x {k} = {} entries, got {}",
                n * k,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AnalysisError::InvalidInput("value matrix has non-finite entries".into()));
        }
        Ok(ValueMatrix { n_levels: n, n_states: k, values, level_ids, state_ids, policy_tag: policy_tag.into() })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_states..(i + 1) * self.n_states]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_levels).map(|i| self.values[i * self.n_states + j]).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("value matrix serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, AnalysisError> {
        let m: ValueMatrix = serde_json::from_str(text).map_err(|e| AnalysisError::InvalidInput(e.to_string()))?;
        ValueMatrix::new(m.values, m.level_ids, m.state_ids, m.policy_tag)
    }
}

/// Exact values by policy evaluation: row `i` holds `V^π(s)` of level `i`
/// at each state in `states`, with `policy_for` giving the (Markov) policy
/// on that level.
pub fn exact_value_matrix<F>(
    levels: &[LevelHandle],
    states: &[usize],
    policy_tag: &str,
    mut policy_for: F,
) -> Result<ValueMatrix, AnalysisError>
where
    F: FnMut(&LevelHandle) -> Result<Policy<f64>, AnalysisError>,
{
    let mut values = Vec::with_capacity(levels.len() * states.len());
    for level in levels {
        if let Some(&s) = states.iter().find(|&&s| s >= level.n_states()) {
            return Err(AnalysisError::InvalidInput(format!(
                "state {s} outside level {} ({} states)",
                level.seed(),
                level.n_states()
            )));
        }
        let v = solve_value(level.spec(), &policy_for(level)?)?;
        values.extend(states.iter().map(|&s| v[s]));
    }
    ValueMatrix::new(values, levels.iter().map(|l| l.seed()).collect(), states.to_vec(), policy_tag)
}

/// Fixed recurrent snapshots at which fine-tuned critics are compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub obs: Vec<Vec<f64>>,
    pub states: Vec<LstmState<f64>>,
    /// Level index and environment state each probe was recorded at.
    pub origin: Vec<(usize, usize)>,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub lr: f64,
    pub max_steps: usize,
    /// Stop once the loss improves by less than this fraction over
    /// `plateau_window` steps.
    pub plateau_tol: f64,
    pub plateau_window: usize,
    pub episodes_per_level: usize,
    pub horizon: usize,
    pub n_probes: usize,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            lr: 1e-2,
            max_steps: 500,
            plateau_tol: 1e-5,
            plateau_window: 50,
            episodes_per_level: 32,
            horizon: 200,
            n_probes: 64,
            seed: 0,
        }
    }
}

/// Samples `n` snapshots uniformly from the steps of episodes played by
/// `net` across `levels`.
pub fn sample_probe_set(
    net: &ActorCritic,
    levels: &[LevelHandle],
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<ProbeSet, AnalysisError> {
    let episodes = (4 * levels.len()).max(n);
    let eps = evaluate_detailed(net, levels, episodes, derive_seed(seed, "probes/episodes"), horizon, false, true)?;
    let pool: Vec<(usize, usize, &LstmState<f64>)> =
        eps.iter().flat_map(|e| e.steps.iter().map(move |s| (e.level_id, s.env_state, &s.recurrent))).collect();
    if pool.len() < n {
        return Err(AnalysisError::InvalidInput(format!("only {} visited states, {n} probes requested", pool.len())));
    }
    let mut rng = component_rng(seed, "probes/pick");
    let mut picked = sample(&mut rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    let mut probes = ProbeSet { obs: Vec::new(), states: Vec::new(), origin: Vec::new() };
    for i in picked {
        let (level, state, rec) = pool[i];
        probes.obs.push(levels[level].observe(state));
        probes.states.push(rec.clone());
        probes.origin.push((level, state));
    }
    Ok(probes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlaggedLevel {
    pub level_id: u64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct FineTuneResult {
    pub matrix: ValueMatrix,
    pub probes: ProbeSet,
    pub flagged: Vec<FlaggedLevel>,
    /// Fine-tuning steps used per kept level.
    pub steps: Vec<usize>,
}

/// Hidden features of the network at a batch of `(obs, state)` inputs.
fn features(net: &ActorCritic, obs: &[Vec<f64>], states: &[LstmState<f64>]) -> Result<Vec<f64>, AnalysisError> {
    let flat: Vec<f64> = obs.iter().flatten().copied().collect();
    Ok(net.infer(&flat, states)?.into_iter().flat_map(|o| o.state.hidden).collect())
}

fn critic_values(net: &ActorCritic, feats: &[f64], rows: usize) -> Result<Vec<f64>, AnalysisError> {
    let mut tape = Tape::new();
    let bound = net.bind_trainable(&mut tape, |_| false);
    let f = tape.constant(feats.to_vec(), Shape::new(rows, net.config().lstm_hidden))?;
    let out = net.critic_forward(&mut tape, &bound, f)?;
    Ok(tape.value(out.value).to_vec())
}

/// Fits the critic parameters of a copy of `net` to discounted Monte Carlo
/// returns on one level. Returns the tuned network and the steps used, or
/// a reason when the loss stops being finite.
fn fine_tune(
    net: &ActorCritic,
    level: &LevelHandle,
    cfg: &FineTuneConfig,
) -> Result<Result<(ActorCritic, usize), String>, AnalysisError> {
    let eps = evaluate_detailed(
        net,
        std::slice::from_ref(level),
        cfg.episodes_per_level,
        derive_seed(cfg.seed, &format!("finetune/{}", level.seed())),
        cfg.horizon,
        false,
        true,
    )?;
    let gamma = level.gamma();
    let mut obs = Vec::new();
    let mut states = Vec::new();
    let mut targets = Vec::new();
    for e in &eps {
        let mut g = 0.0;
        let mut rtg = vec![0.0; e.steps.len()];
        for (t, s) in e.steps.iter().enumerate().rev() {
            g = s.reward + gamma * g;
            rtg[t] = g;
        }
        for (s, g) in e.steps.iter().zip(rtg) {
            obs.push(level.observe(s.env_state));
            states.push(s.recurrent.clone());
            targets.push(g);
        }
    }
    let m = targets.len();
    let feats = features(net, &obs, &states)?;
    let h = net.config().lstm_hidden;

    let mut tuned = net.clone();
    let critic = tuned.critic_param_indices();
    let mut adam = Adam::new(cfg.lr, tuned.params());
    let mut history: Vec<f64> = Vec::with_capacity(cfg.max_steps);
    for step in 0..cfg.max_steps {
        let mut tape = Tape::new();
        let bound = tuned.bind_trainable(&mut tape, |i| critic.contains(&i));
        let f = tape.constant(feats.clone(), Shape::new(m, h))?;
        let y = tape.constant(targets.clone(), Shape::new(m, 1))?;
        let value = tuned.critic_forward(&mut tape, &bound, f)?.value;
        let err = tape.sub(value, y)?;
        let sq = tape.square(err)?;
        let loss = tape.mean(sq)?;
        let l = tape.scalar(loss);
        if !l.is_finite() {
            return Ok(Err(format!("loss became non-finite at step {step}")));
        }
        if history.len() >= cfg.plateau_window {
            let before = history[history.len() - cfg.plateau_window];
            if (before - l) / before.abs().max(1e-12) < cfg.plateau_tol {
                return Ok(Ok((tuned, step)));
            }
        }
        history.push(l);
        tape.backward(loss)?;
        let store = tuned.params_mut();
        store.zero_grads();
        store.accumulate(&tape, &bound);
        if !store.grad_norm().is_finite() {
            return Ok(Err(format!("gradient became non-finite at step {step}")));
        }
        adam.step_only(store, &critic);
    }
    Ok(Ok((tuned, cfg.max_steps)))
}

/// Per-level value estimates from a shared network: for every level the
/// critic parameters of a copy of `base` are fitted to Monte Carlo returns
/// of the frozen policy, and the tuned critic is read out on a probe set
/// drawn once across all levels. Levels whose fit diverges are reported in
/// `flagged` and left out of the matrix.
pub fn estimate_true_values(
    levels: &[LevelHandle],
    base: &ActorCritic,
    cfg: &FineTuneConfig,
) -> Result<FineTuneResult, AnalysisError> {
    if levels.is_empty() {
        return Err(AnalysisError::InvalidInput("no levels".into()));
    }
    let probes = sample_probe_set(base, levels, cfg.n_probes, cfg.horizon, cfg.seed)?;
    let probe_feats = features(base, &probes.obs, &probes.states)?;
    let mut values = Vec::new();
    let mut ids = Vec::new();
    let mut flagged = Vec::new();
    let mut steps = Vec::new();
    for level in levels {
        match fine_tune(base, level, cfg)? {
            Ok((tuned, used)) => {
                let row = critic_values(&tuned, &probe_feats, probes.len())?;
                if row.iter().any(|v| !v.is_finite()) {
                    flagged.push(FlaggedLevel { level_id: level.seed(), reason: "non-finite probe values".into() });
                    continue;
                }
                values.extend(row);
                ids.push(level.seed());
                steps.push(used);
            }
            Err(reason) => flagged.push(FlaggedLevel { level_id: level.seed(), reason }),
        }
    }
    if ids.is_empty() {
        return Err(AnalysisError::InvalidInput("fine-tuning diverged on every level".into()));
    }
    let tag = format!("network:{:016x}", params_fingerprint(base));
    let matrix = ValueMatrix::new(values, ids, (0..probes.len()).collect(), tag)?;
    Ok(FineTuneResult { matrix, probes, flagged, steps })
}

/// Stable fingerprint of a network's parameter values.
fn params_fingerprint(net: &ActorCritic) -> u64 {
    let mut hasher = Sha256::new();
    for v in net.params().flat_values() {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
