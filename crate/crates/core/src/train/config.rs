use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    A2c,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Ppo => "ppo",
            Algorithm::A2c => "a2c",
        })
    }
}

impl FromStr for Algorithm {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ppo" => Ok(Algorithm::Ppo),
            "a2c" => Ok(Algorithm::A2c),
            other => Err(TrainError::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub n_workers: usize,
    pub steps_per_worker: usize,
    /// Episode step cap; hitting it truncates the episode.
    pub horizon: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    /// Global gradient-norm cap applied before each optimiser step.
    /// Serialised as a number, with `0` meaning no cap, so that formats
    /// without a null value can round-trip it.
    #[serde(with = "zero_is_none")]
    pub max_grad_norm: Option<f64>,
    /// Standardise advantages (per minibatch) before the policy loss.
    pub normalize_advantages: bool,
    /// States subsampled per update for the κ estimate.
    pub kappa_samples: usize,
}

mod zero_is_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(v.unwrap_or(0.0))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let v = f64::deserialize(d)?;
        Ok((v != 0.0).then_some(v))
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Ppo,
            n_workers: 4,
            steps_per_worker: 256,
            horizon: crate::envs::DEFAULT_HORIZON,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 3,
            minibatches: 8,
            value_coef: 0.5,
            entropy_coef: 0.01,
            lr: 5e-4,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
            kappa_samples: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Config(m));
        if self.n_workers == 0 {
            return Err(TrainError::NoWorkers);
        }
        if self.steps_per_worker == 0 {
            return Err(TrainError::NoSteps);
        }
        if self.horizon == 0 {
            return err("horizon must be at least 1".into());
        }
        for (name, value) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(TrainError::OutOfUnitRange { name, value });
            }
        }
        if !(self.clip_eps > 0.0) {
            return err(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return err("epochs and minibatches must be at least 1".into());
        }
        if self.minibatches > self.n_workers * self.steps_per_worker {
            return err("more minibatches than samples per update".into());
        }
        for (name, v) in [("value_coef", self.value_coef), ("entropy_coef", self.entropy_coef), ("lr", self.lr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return err(format!("max_grad_norm must be positive, got {g}"));
            }
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.n_workers * self.steps_per_worker
    }
}
