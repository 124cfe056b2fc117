use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{HeadKind, ModelError, NetConfig};
use crate::diffcore::{lstm_step, Bound, LstmParams, LstmState, NodeId, ParamStore, Shape, Tape};
use crate::envs::{LevelHandle, Policy};

const ENC_W: usize = 0;
const ENC_B: usize = 1;
const LSTM_WX: usize = 2;
const LSTM_WH: usize = 3;
const LSTM_B: usize = 4;
const ACTOR_W: usize = 5;
const ACTOR_B: usize = 6;
const CRITIC: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl PolicyOutput {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticOutput {
    pub value: f64,
    /// Posterior over basis values (dynamic head only).
    pub alpha: Option<Vec<f64>>,
    /// Basis value estimates (dynamic head only).
    pub mu: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub policy: PolicyOutput,
    pub critic: CriticOutput,
    pub state: LstmState<f64>,
}

/// Critic nodes for a batch: `value` is `B × 1`, `alpha`/`mu` are `B × N_b`.
#[derive(Clone, Copy, Debug)]
pub struct CriticNodes {
    pub value: NodeId,
    pub alpha: Option<NodeId>,
    pub mu: Option<NodeId>,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub features: NodeId,
    pub cell: NodeId,
    pub logits: NodeId,
    pub log_probs: NodeId,
    pub critic: CriticNodes,
}

/// Network parameters together with the config that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    config: NetConfig,
    params: ParamStore<f64>,
}

/// `(name, shape, fan_in)` for every tensor, in store order.
fn layout(cfg: &NetConfig) -> Vec<(&'static str, Shape, usize)> {
    let (d, e, h, a) = (cfg.obs_dim, cfg.encoder_hidden, cfg.lstm_hidden, cfg.n_actions);
    let mut out = vec![
        ("enc.w", Shape::new(d, e), d),
        ("enc.b", Shape::row(e), d),
        ("lstm.w_x", Shape::new(e, 4 * h), e + h),
        ("lstm.w_h", Shape::new(h, 4 * h), e + h),
        ("lstm.b", Shape::row(4 * h), e + h),
        ("actor.w", Shape::new(h, a), h),
        ("actor.b", Shape::row(a), h),
    ];
    match cfg.head {
        HeadKind::Baseline => {
            out.push(("critic.w", Shape::new(h, 1), h));
            out.push(("critic.b", Shape::row(1), h));
        }
        HeadKind::Dynamic { n_basis } => {
            out.push(("critic.alpha.w", Shape::new(h, n_basis), h));
            out.push(("critic.alpha.b", Shape::row(n_basis), h));
            out.push(("critic.mu.w", Shape::new(h, n_basis), h));
            out.push(("critic.mu.b", Shape::row(n_basis), h));
        }
        HeadKind::Control { hidden } => {
            out.push(("critic.h.w", Shape::new(h, hidden), h));
            out.push(("critic.h.b", Shape::row(hidden), h));
            out.push(("critic.out.w", Shape::new(hidden, 1), hidden));
            out.push(("critic.out.b", Shape::row(1), hidden));
        }
    }
    out
}

impl ActorCritic {
    /// Fresh network with weights uniform in `±1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, fan_in) in layout(&config) {
            params.add_uniform(name, shape, fan_in, rng)?;
        }
        Ok(ActorCritic { config, params })
    }

    /// Network with every parameter zero.
    pub fn zeros(config: NetConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, _) in layout(&config) {
            params.add(name, shape, vec![0.0; shape.len()])?;
        }
        Ok(ActorCritic { config, params })
    }

    /// Wraps existing tensors, checking names and shapes against `config`.
    pub fn from_params(config: NetConfig, params: ParamStore<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let want = layout(&config);
        if want.len() != params.len() {
            return Err(ModelError::Checkpoint(format!("config needs {} tensors, got {}", want.len(), params.len())));
        }
        for (i, (name, shape, _)) in want.iter().enumerate() {
            let t = params.tensor(i);
            if t.name != *name || t.shape != *shape {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {i} is `{}` {}, config expects `{name}` {shape}",
                    t.name, t.shape
                )));
            }
        }
        Ok(ActorCritic { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    pub fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<f64> {
        self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// Store indices of the tensors that shape the policy (encoder, LSTM,
    /// actor).
    pub fn policy_param_indices(&self) -> Vec<usize> {
        (0..CRITIC).collect()
    }

    /// Store indices of the critic head's tensors.
    pub fn critic_param_indices(&self) -> Vec<usize> {
        (CRITIC..self.params.len()).collect()
    }

    pub fn bind(&self, tape: &mut Tape<f64>) -> Bound {
        self.params.bind(tape)
    }

    /// Binds parameters with gradients only for tensors where `trainable`
    /// holds.
    pub fn bind_trainable(&self, tape: &mut Tape<f64>, trainable: impl Fn(usize) -> bool) -> Bound {
        self.params.bind_frozen(tape, trainable)
    }

    /// Encoder plus one LSTM step on a batch `obs: [B × D]` with state
    /// `hidden, cell: [B × H]`. Returns `(features, cell)`; the features
    /// are the new hidden state.
    pub fn encode(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        obs: NodeId,
        hidden: NodeId,
        cell: NodeId,
    ) -> Result<(NodeId, NodeId), ModelError> {
        let got = tape.shape(obs).cols;
        if got != self.config.obs_dim {
            return Err(ModelError::ObsDim { expected: self.config.obs_dim, got });
        }
        let pre = tape.affine(obs, bound.id(ENC_W), bound.id(ENC_B))?;
        let x = tape.tanh(pre)?;
        let params = LstmParams { w_x: bound.id(LSTM_WX), w_h: bound.id(LSTM_WH), bias: bound.id(LSTM_B) };
        Ok(lstm_step(tape, x, hidden, cell, &params)?)
    }

    /// Returns `(logits, log_probs)`, each `B × A`.
    pub fn actor_forward(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        features: NodeId,
    ) -> Result<(NodeId, NodeId), ModelError> {
        let logits = tape.affine(features, bound.id(ACTOR_W), bound.id(ACTOR_B))?;
        let log_probs = tape.log_softmax(logits)?;
        Ok((logits, log_probs))
    }

    pub fn critic_forward(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        features: NodeId,
    ) -> Result<CriticNodes, ModelError> {
        match self.config.head {
            HeadKind::Baseline => self.critic_forward_baseline(tape, bound, features),
            HeadKind::Dynamic { .. } => self.critic_forward_dynamic(tape, bound, features),
            HeadKind::Control { .. } => self.critic_forward_control(tape, bound, features),
        }
    }

    fn expect_head(&self, expected: &'static str) -> Result<(), ModelError> {
        let got = self.config.head.name();
        if got == expected {
            Ok(())
        } else {
            Err(ModelError::HeadMismatch { expected, got })
        }
    }

    pub fn critic_forward_baseline(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        features: NodeId,
    ) -> Result<CriticNodes, ModelError> {
        self.expect_head("baseline")?;
        let value = tape.affine(features, bound.id(CRITIC), bound.id(CRITIC + 1))?;
        Ok(CriticNodes { value, alpha: None, mu: None })
    }

    pub fn critic_forward_dynamic(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        features: NodeId,
    ) -> Result<CriticNodes, ModelError> {
        self.expect_head("dynamic")?;
        let scores = tape.affine(features, bound.id(CRITIC), bound.id(CRITIC + 1))?;
        let alpha = tape.softmax(scores)?;
        let mu = tape.affine(features, bound.id(CRITIC + 2), bound.id(CRITIC + 3))?;
        let weighted = tape.mul(alpha, mu)?;
        let value = tape.row_sum(weighted)?;
        Ok(CriticNodes { value, alpha: Some(alpha), mu: Some(mu) })
    }

    pub fn critic_forward_control(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        features: NodeId,
    ) -> Result<CriticNodes, ModelError> {
        self.expect_head("control")?;
        let pre = tape.affine(features, bound.id(CRITIC), bound.id(CRITIC + 1))?;
        let hidden = tape.relu(pre)?;
        let value = tape.affine(hidden, bound.id(CRITIC + 2), bound.id(CRITIC + 3))?;
        Ok(CriticNodes { value, alpha: None, mu: None })
    }

    pub fn forward(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        obs: NodeId,
        hidden: NodeId,
        cell: NodeId,
    ) -> Result<ForwardNodes, ModelError> {
        let (features, cell) = self.encode(tape, bound, obs, hidden, cell)?;
        let (logits, log_probs) = self.actor_forward(tape, bound, features)?;
        let critic = self.critic_forward(tape, bound, features)?;
        Ok(ForwardNodes { features, cell, logits, log_probs, critic })
    }

    /// Gradient-free forward pass for a batch of single steps. `obs` holds
    /// `states.len()` observations back to back.
    pub fn infer(&self, obs: &[f64], states: &[LstmState<f64>]) -> Result<Vec<StepOutput>, ModelError> {
        let (d, h) = (self.config.obs_dim, self.config.lstm_hidden);
        let b = states.len();
        if obs.len() != b * d {
            return Err(ModelError::ObsDim { expected: b * d, got: obs.len() });
        }
        let mut hidden = Vec::with_capacity(b * h);
        let mut cell = Vec::with_capacity(b * h);
        for s in states {
            if s.size() != h {
                return Err(ModelError::Config(format!("recurrent state has size {}, network uses {h}", s.size())));
            }
            hidden.extend_from_slice(&s.hidden);
            cell.extend_from_slice(&s.cell);
        }
        let mut tape = Tape::new();
        let bound = self.bind_trainable(&mut tape, |_| false);
        let obs = tape.constant(obs.to_vec(), Shape::new(b, d))?;
        let hid = tape.constant(hidden, Shape::new(b, h))?;
        let cel = tape.constant(cell, Shape::new(b, h))?;
        let out = self.forward(&mut tape, &bound, obs, hid, cel)?;
        let a = self.config.n_actions;
        let rows = |id: NodeId, width: usize, r: usize| tape.value(id)[r * width..(r + 1) * width].to_vec();
        let nb = self.config.head.n_basis().unwrap_or(0);
        Ok((0..b)
            .map(|r| StepOutput {
                policy: PolicyOutput { logits: rows(out.logits, a, r), log_probs: rows(out.log_probs, a, r) },
                critic: CriticOutput {
                    value: tape.value(out.critic.value)[r],
                    alpha: out.critic.alpha.map(|id| rows(id, nb, r)),
                    mu: out.critic.mu.map(|id| rows(id, nb, r)),
                },
                state: LstmState { hidden: rows(out.features, h, r), cell: rows(out.cell, h, r) },
            })
            .collect())
    }

    pub fn step(&self, obs: &[f64], state: &LstmState<f64>) -> Result<StepOutput, ModelError> {
        Ok(self.infer(obs, std::slice::from_ref(state))?.remove(0))
    }

    /// The policy the actor induces on `level` when the recurrent state is
    /// reset at every step: a Markov policy over the level's states.
    pub fn markov_policy(&self, level: &LevelHandle) -> Result<Policy<f64>, ModelError> {
        let n = level.n_states();
        let obs: Vec<f64> = (0..n).flat_map(|s| level.observe(s)).collect();
        let zero = LstmState::zeros(self.config.lstm_hidden);
        let outs = self.infer(&obs, &vec![zero; n])?;
        let probs: Vec<f64> = outs.iter().flat_map(|o| o.policy.probs()).collect();
        Policy::new(n, self.config.n_actions, probs).map_err(|e| ModelError::Config(e.to_string()))
    }
}
