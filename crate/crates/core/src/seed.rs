//! Deterministic seed derivation so every stochastic step gets its own
//! reproducible stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer over `seed` and a stream tag.
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream))
}

/// Stream tags, kept distinct so unrelated steps never share randomness.
pub mod stream {
    pub const GRADER_INIT: u64 = 0x01;
    pub const GRADER_SPLIT: u64 = 0x02;
    pub const GRADER_EPOCH: u64 = 0x03;
    pub const ENSEMBLE_MEMBER: u64 = 0x10;
    pub const MLP: u64 = 0x20;
    pub const FOLDS: u64 = 0x30;
    pub const ITERATION: u64 = 0x40;
    pub const SUBJECT: u64 = 0x50;
}
