//! Labeled seed derivation. Every random stream in the pipeline is keyed by
//! a root seed plus a label (and optional integer coordinates), so stages
//! and individual nodes stay independently reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(seed: u64, label: &str, coords: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for c in coords {
        h.update(c.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn rng(seed: u64, label: &str, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label, coords))
}

/// Uniform draw in `[0, 1)` from a labeled hash.
pub fn unit(seed: u64, label: &str, coords: &[u64]) -> f64 {
    (derive(seed, label, coords) >> 11) as f64 / (1u64 << 53) as f64
}
