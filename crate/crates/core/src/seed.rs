//! Seed derivation.
//!
//! Every random component draws from its own stream, derived from the single
//! top-level seed by name: the child seed is the first eight bytes
//! (little-endian) of `SHA-256(parent_seed_le || name)`. Nested components
//! derive again from their parent's child seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(parent: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn derive_indexed(parent: u64, name: &str, index: u64) -> u64 {
    derive(parent, &format!("{name}/{index}"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
