//! Seed derivation.
//!
//! Every random stream in a run is derived from the single master seed and a
//! component name, so that adding a worker or an analysis pass never shifts
//! the stream another component sees. The derivation is the first eight bytes
//! (little endian) of `SHA-256(master_seed_le || component_name)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Random generator used everywhere in the crate. ChaCha output is stable
/// across platforms and crate versions, which keeps runs reproducible.
pub type Rng = ChaCha8Rng;

pub fn derive_seed(master: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(component.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn component_rng(master: u64, component: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(master, component))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
