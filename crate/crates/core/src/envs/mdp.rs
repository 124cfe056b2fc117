use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::Scalar;

/// A finite MDP with dense `S × A × S` transition and reward arrays.
///
/// Terminal states are absorbing: they self-loop with probability one and
/// zero reward, so their value is zero under every policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec<T> {
    n_states: usize,
    n_actions: usize,
    transition: Vec<T>,
    reward: Vec<T>,
    gamma: T,
    terminal: Vec<bool>,
    start_dist: Vec<T>,
}

pub(crate) fn prob_tol<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(64.0))
}

impl<T: Scalar> MdpSpec<T> {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<T>,
        reward: Vec<T>,
        gamma: T,
        terminal: Vec<bool>,
        start_dist: Vec<T>,
    ) -> Result<Self, EnvError> {
        let spec = MdpSpec { n_states, n_actions, transition, reward, gamma, terminal, start_dist };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return Err(EnvError::InvalidSpec("at least one state and one action required".into()));
        }
        let cube = s * a * s;
        if self.transition.len() != cube || self.reward.len() != cube {
            return Err(EnvError::InvalidSpec(format!(
                "transition/reward arrays must have {cube} entries, got {} and {}",
                self.transition.len(),
                self.reward.len()
            )));
        }
        if self.terminal.len() != s || self.start_dist.len() != s {
            return Err(EnvError::InvalidSpec("terminal flags and start distribution need one entry per state".into()));
        }
        if !(self.gamma > T::zero() && self.gamma < T::one()) {
            return Err(EnvError::InvalidSpec(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        let tol = prob_tol::<T>();
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(EnvError::InvalidSpec("rewards must be finite".into()));
        }
        for st in 0..s {
            for ac in 0..a {
                let row = self.row(st, ac);
                if row.iter().any(|&p| !(p >= T::zero())) {
                    return Err(EnvError::InvalidSpec(format!("negative probability in row ({st}, {ac})")));
                }
                let total: T = row.iter().copied().sum();
                if (total - T::one()).abs() > tol {
                    return Err(EnvError::InvalidSpec(format!("row ({st}, {ac}) sums to {total}")));
                }
                if self.terminal[st] {
                    let loops = row[st] == T::one() && self.reward_row(st, ac).iter().all(|&r| r == T::zero());
                    if !loops {
                        return Err(EnvError::InvalidSpec(format!(
                            "terminal state {st} must self-loop with zero reward"
                        )));
                    }
                }
            }
        }
        if self.start_dist.iter().any(|&p| !(p >= T::zero())) {
            return Err(EnvError::InvalidSpec("negative start probability".into()));
        }
        let total: T = self.start_dist.iter().copied().sum();
        if (total - T::one()).abs() > tol {
            return Err(EnvError::InvalidSpec(format!("start distribution sums to {total}")));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn transitions(&self) -> &[T] {
        &self.transition
    }

    pub fn rewards(&self) -> &[T] {
        &self.reward
    }

    pub fn terminal_flags(&self) -> &[bool] {
        &self.terminal
    }

    pub fn start_dist(&self) -> &[T] {
        &self.start_dist
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    /// `P(· | s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[T] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// `r(s, a, ·)`.
    pub fn reward_row(&self, s: usize, a: usize) -> &[T] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.reward[base..base + self.n_states]
    }

    pub fn expected_reward(&self, s: usize, a: usize) -> T {
        self.row(s, a).iter().zip(self.reward_row(s, a)).map(|(&p, &r)| p * r).sum()
    }

    /// Same MDP with a different discount.
    pub fn with_gamma(&self, gamma: T) -> Result<Self, EnvError> {
        let mut spec = self.clone();
        spec.gamma = gamma;
        spec.validate()?;
        Ok(spec)
    }
}

/// A stationary stochastic policy table `π(a | s)`, one row per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy<T> {
    n_states: usize,
    n_actions: usize,
    probs: Vec<T>,
}

impl<T: Scalar> Policy<T> {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<T>) -> Result<Self, EnvError> {
        if probs.len() != n_states * n_actions || n_actions == 0 {
            return Err(EnvError::InvalidPolicy(format!(
                "expected {n_states}x{n_actions} table, got {} entries",
                probs.len()
            )));
        }
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|&p| !(p >= T::zero())) {
                return Err(EnvError::InvalidPolicy(format!("row {s} has a negative or non-finite entry")));
            }
            let total: T = row.iter().copied().sum();
            if (total - T::one()).abs() > tol {
                return Err(EnvError::InvalidPolicy(format!("row {s} sums to {total}")));
            }
        }
        Ok(Policy { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = T::one() / T::from_usize(n_actions).unwrap();
        Policy { n_states, n_actions, probs: vec![p; n_states * n_actions] }
    }

    /// Row-wise softmax of a logit table.
    pub fn from_logits(n_states: usize, n_actions: usize, logits: &[T]) -> Result<Self, EnvError> {
        if logits.len() != n_states * n_actions {
            return Err(EnvError::InvalidPolicy("logit table has the wrong size".into()));
        }
        let mut probs = logits.to_vec();
        for row in probs.chunks_mut(n_actions) {
            crate::diffcore::softmax_in_place(row);
        }
        Self::new(n_states, n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub(crate) fn check_fits(&self, spec: &MdpSpec<T>) -> Result<(), EnvError> {
        if self.n_states != spec.n_states() || self.n_actions != spec.n_actions() {
            return Err(EnvError::InvalidPolicy(format!(
                "policy is {}x{} but the MDP has {} states and {} actions",
                self.n_states,
                self.n_actions,
                spec.n_states(),
                spec.n_actions()
            )));
        }
        Ok(())
    }
}
