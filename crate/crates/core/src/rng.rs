//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 keystream whose key is
//! derived from `(seed, purpose tag, index)`. ChaCha is a counter-mode
//! generator, so a stream is a pure function of its key and position, and
//! work split across threads by index yields the same numbers for any
//! scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a child seed from `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    mix64(mix64(seed ^ tag_hash(tag)).wrapping_add(mix64(index.wrapping_add(GOLDEN))))
}

/// Open the stream identified by `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

/// A uniformly random permutation of `0..n`.
pub fn permutation(n: usize, seed: u64, tag: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, tag, 0));
    idx
}
