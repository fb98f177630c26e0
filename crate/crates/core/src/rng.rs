//! Reproducible random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream keyed by a
//! base seed plus a tuple of tags (replicate index, arm, chunk, ...). Work can
//! then be split across threads in any way without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream for `(seed, tags...)`. Up to three tags; distinct tuples give
/// independent streams.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    assert!(tags.len() <= 3, "at most three stream tags");
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    for (i, tag) in tags.iter().enumerate() {
        key[8 * (i + 1)..8 * (i + 2)].copy_from_slice(&tag.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Derives a child seed, for handing a sub-computation its own seed space.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    use rand::RngCore;
    stream(seed, tags).next_u64()
}
