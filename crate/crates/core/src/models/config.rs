use serde::{Deserialize, Serialize};

use super::ModelError;

/// Largest allowed relative parameter-count gap between a control head of
/// width `2 N_b` and the dynamic head with `N_b` basis values.
pub const PARITY_TOLERANCE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadKind {
    Baseline,
    Dynamic { n_basis: usize },
    Control { hidden: usize },
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Baseline => "baseline",
            HeadKind::Dynamic { .. } => "dynamic",
            HeadKind::Control { .. } => "control",
        }
    }

    /// Control head matched to a dynamic head with `n_basis` basis values.
    pub fn control_for(n_basis: usize) -> Self {
        HeadKind::Control { hidden: 2 * n_basis }
    }

    pub fn n_basis(self) -> Option<usize> {
        match self {
            HeadKind::Dynamic { n_basis } => Some(n_basis),
            _ => None,
        }
    }

    /// Parses `baseline`, `dynamic` or `control`, using `n_basis` for the
    /// latter two.
    pub fn from_name(name: &str, n_basis: usize) -> Result<Self, ModelError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(HeadKind::Baseline),
            "dynamic" => Ok(HeadKind::Dynamic { n_basis }),
            "control" => Ok(HeadKind::control_for(n_basis)),
            other => Err(ModelError::Config(format!("unknown head `{other}`"))),
        }
    }
}

/// Number of critic-head parameters on top of `features` trunk outputs.
pub fn head_param_count(head: HeadKind, features: usize) -> usize {
    match head {
        HeadKind::Baseline => features + 1,
        HeadKind::Dynamic { n_basis } => 2 * n_basis * (features + 1),
        HeadKind::Control { hidden } => hidden * (features + 1) + hidden + 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub encoder_hidden: usize,
    pub lstm_hidden: usize,
    pub head: HeadKind,
}

impl NetConfig {
    pub fn new(obs_dim: usize, n_actions: usize, head: HeadKind) -> Self {
        NetConfig { obs_dim, n_actions, encoder_hidden: 64, lstm_hidden: 64, head }
    }

    pub fn with_sizes(mut self, encoder_hidden: usize, lstm_hidden: usize) -> Self {
        self.encoder_hidden = encoder_hidden;
        self.lstm_hidden = lstm_hidden;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("obs_dim", self.obs_dim),
            ("n_actions", self.n_actions),
            ("encoder_hidden", self.encoder_hidden),
            ("lstm_hidden", self.lstm_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        match self.head {
            HeadKind::Baseline => {}
            HeadKind::Dynamic { n_basis } => {
                if !(2..=10).contains(&n_basis) {
                    return Err(ModelError::Config(format!("n_basis must lie in [2, 10], got {n_basis}")));
                }
            }
            HeadKind::Control { hidden } => {
                if hidden == 0 {
                    return Err(ModelError::Config("control hidden width must be at least 1".into()));
                }
                if hidden % 2 == 0 {
                    let gap = self.parity_gap(hidden / 2);
                    if gap > PARITY_TOLERANCE {
                        return Err(ModelError::Config(format!(
                            "control head of width {hidden} differs from the dynamic head with {} basis values \
                             by {:.2}% of parameters (limit {:.0}%); use a wider LSTM",
                            hidden / 2,
                            100.0 * gap,
                            100.0 * PARITY_TOLERANCE
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `|control(2 N_b) − dynamic(N_b)| / dynamic(N_b)` at this trunk width.
    pub fn parity_gap(&self, n_basis: usize) -> f64 {
        let h = self.lstm_hidden;
        let dynamic = head_param_count(HeadKind::Dynamic { n_basis }, h) as f64;
        let control = head_param_count(HeadKind::control_for(n_basis), h) as f64;
        (control - dynamic).abs() / dynamic
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }
}
