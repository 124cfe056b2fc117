use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActorCritic, ModelError, NetConfig};
use crate::diffcore::{ParamStore, ParamTensor};

pub const CHECKPOINT_FORMAT: &str = "dvelab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: NetConfig,
    /// Head variant name, repeated from `config` for readers that only
    /// look at the header.
    pub head: String,
    pub n_basis: Option<usize>,
    pub seed: u64,
    /// Environment steps consumed so far.
    pub step: u64,
    /// Parameter updates applied so far.
    pub update: u64,
}

/// A saved network, optionally with the trainer state needed to resume.
///
/// Stored as JSON; floats are written in shortest round-trip form, so
/// saving and loading reproduces every parameter bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub header: CheckpointHeader,
    pub tensors: Vec<ParamTensor<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer_state: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn new(net: &ActorCritic, seed: u64, step: u64, update: u64) -> Self {
        let config = *net.config();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            header: CheckpointHeader {
                config,
                head: config.head.name().to_string(),
                n_basis: config.head.n_basis(),
                seed,
                step,
                update,
            },
            tensors: net.params().tensors().to_vec(),
            trainer_state: None,
        }
    }

    pub fn network(&self) -> Result<ActorCritic, ModelError> {
        let h = &self.header;
        if h.head != h.config.head.name() || h.n_basis != h.config.head.n_basis() {
            return Err(ModelError::Checkpoint("header head fields disagree with the config".into()));
        }
        let store = ParamStore::from_tensors(self.tensors.clone())?;
        ActorCritic::from_params(h.config, store)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoints always serialise")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unexpected format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        ckpt.network()?;
        Ok(ckpt)
    }

    /// Writes to a sibling temporary file first and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::HeadKind;
    use crate::seed::rng_from_seed;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetConfig::new(15, 2, HeadKind::Dynamic { n_basis: 4 }).with_sizes(8, 16);
        let net = ActorCritic::new(cfg, &mut rng_from_seed(11)).unwrap();
        let ckpt = Checkpoint::new(&net, 11, 2048, 2);
        let back = Checkpoint::from_json(&ckpt.to_json()).unwrap();
        assert_eq!(back, ckpt);
        let restored = back.network().unwrap();
        for (a, b) in restored.params().flat_values().iter().zip(net.params().flat_values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mismatched_tensors_rejected() {
        let cfg = NetConfig::new(15, 2, HeadKind::Baseline).with_sizes(8, 16);
        let net = ActorCritic::new(cfg, &mut rng_from_seed(1)).unwrap();
        let mut ckpt = Checkpoint::new(&net, 1, 0, 0);
        ckpt.header.config.lstm_hidden = 17;
        assert!(Checkpoint::from_json(&ckpt.to_json()).is_err());
        let mut ckpt = Checkpoint::new(&net, 1, 0, 0);
        ckpt.format = "other".into();
        assert!(Checkpoint::from_json(&ckpt.to_json()).is_err());
    }
}
