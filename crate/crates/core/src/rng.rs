//! Seed expansion into independent, named random streams.
//!
//! A single user seed fans out into one ChaCha stream per purpose so that,
//! for example, changing the number of epochs never perturbs the weight
//! initialization.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Resample = 3,
    Synthetic = 4,
    Embeddings = 5,
}

/// Rng for `stream`, further split by `index` (epoch, shape number, ...).
pub fn stream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}

/// Seed for resampling shape `index` of a split.
pub fn resample_seed(seed: u64, index: u64) -> u64 {
    stream(seed, Stream::Resample, index).next_u64()
}

/// Derives a child seed for item `index` (SplitMix64 finalizer).
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
