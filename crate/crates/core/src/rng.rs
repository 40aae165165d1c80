//! Seed derivation. Every random draw in the toolkit flows from one base seed
//! through named sub-streams, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Hashes `(base, name, indices...)` into a 64-bit seed.
pub fn derive_seed(base: u64, name: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Generator for a named sub-stream.
pub fn stream(base: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(base, name, &[]))
}

/// Generator for item `index` of `epoch` within a named sub-stream.
pub fn item_stream(base: u64, name: &str, epoch: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(base, name, &[epoch, index]))
}
