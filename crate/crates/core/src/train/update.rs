use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::advantage::standardize;
use super::{RolloutBatch, TrainConfig, TrainError};
use crate::diffcore::{Adam, NodeId, Shape, Tape};
use crate::models::ActorCritic;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl_old_new: f64,
    pub sample_variance_psi2: f64,
    pub kappa_estimate: f64,
    pub clip_fraction: f64,
}

/// How one minibatch loss is assembled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Ratio clipping range; `f64::INFINITY` disables clipping.
    pub clip_eps: f64,
    /// Use the plain score-function loss `−log π(a|s) · A` instead of the
    /// probability-ratio surrogate.
    pub vanilla: bool,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
}

impl LossConfig {
    pub fn ppo(cfg: &TrainConfig) -> Self {
        LossConfig {
            clip_eps: cfg.clip_eps,
            vanilla: false,
            value_coef: cfg.value_coef,
            entropy_coef: cfg.entropy_coef,
            normalize_advantages: cfg.normalize_advantages,
        }
    }

    pub fn a2c(cfg: &TrainConfig) -> Self {
        LossConfig { vanilla: true, ..Self::ppo(cfg) }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct LossParts {
    total: f64,
    policy: f64,
    value: f64,
    entropy: f64,
    clip_fraction: f64,
}

/// Records the batch rows `idx` (observation and incoming recurrent state)
/// as constants and runs the network on them.
fn rows_forward(
    net: &ActorCritic,
    tape: &mut Tape<f64>,
    bound: &crate::diffcore::Bound,
    batch: &RolloutBatch,
    idx: &[usize],
) -> Result<crate::models::ForwardNodes, TrainError> {
    let (d, h) = (batch.obs_dim, batch.hidden_size);
    let m = idx.len();
    let mut obs = Vec::with_capacity(m * d);
    let mut hid = Vec::with_capacity(m * h);
    let mut cel = Vec::with_capacity(m * h);
    for &i in idx {
        obs.extend_from_slice(batch.obs_row(i));
        hid.extend_from_slice(&batch.hidden[i * h..(i + 1) * h]);
        cel.extend_from_slice(&batch.cell[i * h..(i + 1) * h]);
    }
    let obs = tape.constant(obs, Shape::new(m, d))?;
    let hid = tape.constant(hid, Shape::new(m, h))?;
    let cel = tape.constant(cel, Shape::new(m, h))?;
    Ok(net.forward(tape, bound, obs, hid, cel)?)
}

fn column(tape: &mut Tape<f64>, values: Vec<f64>) -> Result<NodeId, TrainError> {
    let m = values.len();
    Ok(tape.constant(values, Shape::new(m, 1))?)
}

fn build_loss(
    net: &ActorCritic,
    tape: &mut Tape<f64>,
    bound: &crate::diffcore::Bound,
    batch: &RolloutBatch,
    idx: &[usize],
    cfg: &LossConfig,
) -> Result<(NodeId, LossParts), TrainError> {
    let m = idx.len();
    let a = batch.n_actions;
    let fwd = rows_forward(net, tape, bound, batch, idx)?;

    let raw: Vec<f64> = idx.iter().map(|&i| batch.advantages[i]).collect();
    let adv = if cfg.normalize_advantages { standardize(&raw) } else { raw };
    let mut onehot = vec![0.0; m * a];
    for (r, &i) in idx.iter().enumerate() {
        onehot[r * a + batch.actions[i]] = 1.0;
    }
    let onehot = tape.constant(onehot, Shape::new(m, a))?;
    let adv = column(tape, adv)?;
    let picked = tape.mul(fwd.log_probs, onehot)?;
    let taken = tape.row_sum(picked)?;

    let mut clip_fraction = 0.0;
    let surrogate = if cfg.vanilla {
        tape.mul(taken, adv)?
    } else {
        let old = column(tape, idx.iter().map(|&i| batch.log_prob_old[i]).collect())?;
        let log_ratio = tape.sub(taken, old)?;
        let ratio = tape.exp(log_ratio)?;
        let clipped_count = tape.value(ratio).iter().filter(|r| (*r - 1.0).abs() > cfg.clip_eps).count();
        clip_fraction = clipped_count as f64 / m as f64;
        let unclipped = tape.mul(ratio, adv)?;
        let bounded = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)?;
        let clipped = tape.mul(bounded, adv)?;
        tape.min(unclipped, clipped)?
    };
    let gain = tape.mean(surrogate)?;
    let policy_loss = tape.neg(gain)?;

    let returns = column(tape, idx.iter().map(|&i| batch.returns[i]).collect())?;
    let err = tape.sub(fwd.critic.value, returns)?;
    let sq = tape.square(err)?;
    let value_loss = tape.mean(sq)?;

    let probs = tape.exp(fwd.log_probs)?;
    let plogp = tape.mul(probs, fwd.log_probs)?;
    let neg_entropy_sum = tape.sum(plogp)?;
    let entropy = tape.scale(neg_entropy_sum, -1.0 / m as f64)?;

    let v_term = tape.scale(value_loss, cfg.value_coef)?;
    let e_term = tape.scale(entropy, cfg.entropy_coef)?;
    let partial = tape.add(policy_loss, v_term)?;
    let total = tape.sub(partial, e_term)?;
    let parts = LossParts {
        total: tape.scalar(total),
        policy: tape.scalar(policy_loss),
        value: tape.scalar(value_loss),
        entropy: tape.scalar(entropy),
        clip_fraction,
    };
    Ok((total, parts))
}

/// Gradient of the minibatch loss over rows `idx`, flattened in parameter
/// order, without touching the network's stored gradients.
pub fn loss_gradient(
    net: &ActorCritic,
    batch: &RolloutBatch,
    idx: &[usize],
    cfg: &LossConfig,
) -> Result<Vec<f64>, TrainError> {
    if !batch.has_advantages() {
        return Err(TrainError::MissingAdvantages);
    }
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let (root, _) = build_loss(net, &mut tape, &bound, batch, idx, cfg)?;
    tape.backward(root)?;
    Ok(bound.ids().iter().flat_map(|&id| tape.grad(id).iter().copied()).collect())
}

fn minibatch_step(
    net: &mut ActorCritic,
    adam: &mut Adam<f64>,
    batch: &RolloutBatch,
    idx: &[usize],
    cfg: &LossConfig,
    max_grad_norm: Option<f64>,
) -> Result<LossParts, &'static str> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let (root, parts) = build_loss(net, &mut tape, &bound, batch, idx, cfg).map_err(|_| "loss")?;
    if !parts.total.is_finite() {
        return Err("loss");
    }
    tape.backward(root).map_err(|_| "gradient")?;
    let store = net.params_mut();
    store.zero_grads();
    store.accumulate(&tape, &bound);
    let norm = match max_grad_norm {
        Some(g) => store.clip_grad_norm(g),
        None => store.grad_norm(),
    };
    if !norm.is_finite() {
        return Err("gradient");
    }
    adam.step(store);
    Ok(parts)
}

fn run_update<R: Rng + ?Sized>(
    net: &mut ActorCritic,
    adam: &mut Adam<f64>,
    batch: &RolloutBatch,
    cfg: &TrainConfig,
    loss: LossConfig,
    epochs: usize,
    minibatches: usize,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    if !batch.has_advantages() {
        return Err(TrainError::MissingAdvantages);
    }
    let kappa = kappa_estimate(batch, net, cfg.kappa_samples, rng)?;
    let saved = (net.params().clone(), adam.clone());
    adam.lr = cfg.lr;
    let n = batch.len();
    let size = n.div_ceil(minibatches.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut last = Vec::new();
    for epoch in 0..epochs {
        if minibatches > 1 {
            order.shuffle(rng);
        }
        for chunk in order.chunks(size) {
            match minibatch_step(net, adam, batch, chunk, &loss, cfg.max_grad_norm) {
                Ok(parts) if epoch + 1 == epochs => last.push(parts),
                Ok(_) => {}
                Err(what) => {
                    let update = adam.steps();
                    *net.params_mut() = saved.0;
                    *adam = saved.1;
                    return Err(TrainError::NonFinite { what, update });
                }
            }
        }
    }
    let k = last.len() as f64;
    let avg = |f: fn(&LossParts) -> f64| last.iter().map(f).sum::<f64>() / k;
    Ok(UpdateStats {
        policy_loss: avg(|p| p.policy),
        value_loss: avg(|p| p.value),
        entropy: avg(|p| p.entropy),
        kl_old_new: kl_old_new(batch, net)?,
        sample_variance_psi2: sample_variance_psi2(batch),
        kappa_estimate: kappa,
        clip_fraction: avg(|p| p.clip_fraction),
    })
}

/// Clipped-surrogate PPO: `cfg.epochs` passes over `cfg.minibatches`
/// shuffled minibatches. Loss statistics are averaged over the final
/// epoch. A non-finite loss or gradient restores the parameters and the
/// optimiser state and returns an error.
pub fn ppo_update<R: Rng + ?Sized>(
    net: &mut ActorCritic,
    adam: &mut Adam<f64>,
    batch: &RolloutBatch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    run_update(net, adam, batch, cfg, LossConfig::ppo(cfg), cfg.epochs, cfg.minibatches, rng)
}

/// Synchronous advantage actor-critic: one gradient step on the whole
/// batch with the plain score-function loss.
pub fn a2c_update<R: Rng + ?Sized>(
    net: &mut ActorCritic,
    adam: &mut Adam<f64>,
    batch: &RolloutBatch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    run_update(net, adam, batch, cfg, LossConfig::a2c(cfg), 1, 1, rng)
}

/// `Σ_a p(a) (log p(a) − log q(a))` for two log-probability vectors.
pub fn kl_divergence(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p.iter().zip(log_q).map(|(&lp, &lq)| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * (lp - lq) }).sum()
}

/// Mean over batch states of `KL(π_old ‖ π_new)`, using the stored old
/// distributions and `net` as the new policy.
pub fn kl_old_new(batch: &RolloutBatch, net: &ActorCritic) -> Result<f64, TrainError> {
    let a = batch.n_actions;
    let mut total = 0.0;
    let all: Vec<usize> = (0..batch.len()).collect();
    for chunk in all.chunks(512) {
        let mut tape = Tape::new();
        let bound = net.bind_trainable(&mut tape, |_| false);
        let fwd = rows_forward(net, &mut tape, &bound, batch, chunk)?;
        let new = tape.value(fwd.log_probs);
        for (r, &i) in chunk.iter().enumerate() {
            total += kl_divergence(batch.old_dist(i), &new[r * a..(r + 1) * a]);
        }
    }
    Ok(total / batch.len() as f64)
}

pub fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `E[ψ²]`: mean squared advantage before any normalisation.
pub fn sample_variance_psi2(batch: &RolloutBatch) -> f64 {
    mean_square(&batch.advantages)
}

/// Mean of `‖∇_θ log π(a_i | s_i)‖²` over up to `samples` batch rows drawn
/// without replacement, where θ are the parameters feeding the policy.
pub fn kappa_estimate<R: Rng + ?Sized>(
    batch: &RolloutBatch,
    net: &ActorCritic,
    samples: usize,
    rng: &mut R,
) -> Result<f64, TrainError> {
    let n = batch.len();
    let k = samples.min(n);
    if k == 0 {
        return Ok(0.0);
    }
    let policy: Vec<usize> = net.policy_param_indices();
    let chosen = index::sample(rng, n, k).into_vec();
    let a = batch.n_actions;
    let mut total = 0.0;
    for i in chosen {
        let mut tape = Tape::new();
        let bound = net.bind_trainable(&mut tape, |p| policy.contains(&p));
        let (d, h) = (batch.obs_dim, batch.hidden_size);
        let obs = tape.constant(batch.obs_row(i).to_vec(), Shape::row(d))?;
        let hid = tape.constant(batch.hidden[i * h..(i + 1) * h].to_vec(), Shape::row(h))?;
        let cel = tape.constant(batch.cell[i * h..(i + 1) * h].to_vec(), Shape::row(h))?;
        let (features, _) = net.encode(&mut tape, &bound, obs, hid, cel)?;
        let (_, log_probs) = net.actor_forward(&mut tape, &bound, features)?;
        let mut onehot = vec![0.0; a];
        onehot[batch.actions[i]] = 1.0;
        let onehot = tape.constant(onehot, Shape::row(a))?;
        let picked = tape.mul(log_probs, onehot)?;
        let lp = tape.sum(picked)?;
        tape.backward(lp)?;
        total += policy.iter().flat_map(|&p| tape.grad(bound.id(p)).iter()).map(|g| g * g).sum::<f64>();
    }
    Ok(total / k as f64)
}
