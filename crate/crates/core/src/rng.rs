//! Seeded, reproducible random number generation.
//!
//! Every sampler in this crate takes a [`SeedRng`]. ChaCha8 keeps the same
//! stream for the same seed on every platform, which is what makes batch runs
//! and the trends service deterministic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The RNG type used throughout the crate.
pub type SeedRng = ChaCha8Rng;

/// Creates an RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from a base seed and a list of tags.
///
/// Concurrent drivers give each series (or request) its own stream by
/// deriving from the base seed plus a stable identifier; the result does not
/// depend on the order series are processed in.
pub fn derive_seed(base: u64, tags: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for tag in tags {
        hasher.update([0u8]);
        hasher.update(tag.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest width"))
}
