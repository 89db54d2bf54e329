//! Deterministic seed derivation.
//!
//! Every random stream in the toolkit is a `ChaCha8Rng` seeded from a value
//! obtained by mixing the user seed with a stream tag and an index through
//! the SplitMix64 finalizer. The mapping is fixed, so the same user seed
//! always reproduces the same realizations regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used across the crate. Changing any value changes every dataset.
pub mod stream {
    pub const CLEAN: u64 = 0x01;
    pub const NOISE: u64 = 0x02;
    pub const EPOCH: u64 = 0x03;
    pub const MIX: u64 = 0x04;
    pub const FOLDS: u64 = 0x05;
    pub const REFERENCE: u64 = 0x06;
    pub const INIT: u64 = 0x07;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)`.
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}

pub fn rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, index))
}
