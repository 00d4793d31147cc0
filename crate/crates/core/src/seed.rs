//! Seed derivation.
//!
//! Every random stream is keyed by `(root_seed, tag, index)` so that adding a
//! new experiment or worker never shifts the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// `hash(root_seed, tag, index)` folded to 64 bits.
pub fn derive_seed(root_seed: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Generator for stream `(root_seed, tag, index)`.
pub fn stream_rng(root_seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root_seed, tag, index))
}

/// Generator for worker `index` under the documented seed-splitting scheme.
pub fn worker_rng(root_seed: u64, worker_index: u64) -> ChaCha8Rng {
    stream_rng(root_seed, "worker", worker_index)
}

/// Short hex digest of canonical configuration bytes.
pub fn config_hash(canonical: &[u8]) -> String {
    let digest = Sha256::digest(canonical);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
