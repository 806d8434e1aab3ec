//! Deterministic seeding shared by every pipeline stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a stage seed from the global seed and the stage name.
///
/// Keeps stages independently reproducible: re-running one stage in
/// isolation sees the exact generator stream it saw inside a full run.
pub fn derive_seed(global_seed: u64, module: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(module.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
