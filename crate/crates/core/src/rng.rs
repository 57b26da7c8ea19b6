//! Deterministic, labelled random streams.
//!
//! A stream is a ChaCha8 keystream whose 256-bit key is the SHA-256 digest of
//! the seed and the stream label. Every consumer derives its own stream from
//! `(seed, label)`, so results never depend on the order in which independent
//! consumers draw numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derive the stream for `(seed, label)`.
pub fn seed_rng(seed: u64, label: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(b"fairdyn-stream\0");
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Child stream of a labelled parent, e.g. one per sweep cell.
pub fn sub_stream(seed: u64, label: &str, index: u64) -> StreamRng {
    seed_rng(seed, &format!("{label}/{index}"))
}
