//! Root-seed splitting.
//!
//! Every subsystem derives its own seed from the run's root seed and a fixed
//! label, so adding a new consumer never perturbs the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seed for the subsystem named `label`.
pub fn derive(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Seed for item `index` of the subsystem named `label`.
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    derive(derive(root, label), &index.to_string())
}

/// Portable generator used throughout the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
