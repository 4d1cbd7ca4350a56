//! Stable seed derivation.
//!
//! Every random stream in the toolkit is a `ChaCha8Rng` whose seed is derived
//! by hashing a base seed together with a purpose tag and integer coordinates.
//! Two call sites using different tags never share a stream, and the mapping
//! does not depend on platform, thread count or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Hash `(base, tag, parts)` down to a 64-bit seed.
pub fn derive(base: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

pub fn rng(base: u64, tag: &str, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(base, tag, parts))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stable 64-bit id for a string (agent names and similar).
pub fn str_id(s: &str) -> u64 {
    derive(0, s, &[])
}
