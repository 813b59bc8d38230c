//! Deterministic, collision-safe RNG stream derivation.
//!
//! Every random decision in the workspace draws from a ChaCha stream keyed
//! by a list of integers (seed, purpose tag, indices...). Streams are
//! independent of thread count and platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Purpose tags for derived streams; values are arbitrary but fixed.
pub mod tag {
    pub const LEXICON: u64 = 1;
    pub const CONVERSATION: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const EPOCH_SHUFFLE: u64 = 4;
    pub const EXAMPLE: u64 = 5;
}

/// ChaCha stream keyed by `parts` via SHA-256.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
