//! Seed derivation for independent RNG streams.
//!
//! Every subsystem draws from its own ChaCha stream whose seed is derived
//! from the master seed plus a textual label, so changing one consumer never
//! perturbs another (e.g. exploration noise never moves the topology).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Documented stream labels.
pub mod labels {
    pub const TOPOLOGY: &str = "topology";
    pub const TRAFFIC: &str = "traffic";
    pub const SERVICES: &str = "services";
    pub const EPISODE_START: &str = "episode-start";
    pub const AGENT: &str = "agent";
    pub const REPLAY: &str = "replay";
    pub const INIT: &str = "init";
}

/// Derive a child seed from `parent`, a label and a numeric index.
pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(parent: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, label, index))
}
