//! Seed derivation. Every stochastic component owns its own stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a path of stream identifiers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Stream tags so independent consumers never share a sequence.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SAMPLER: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const SUBJECT: u64 = 5;
    pub const TRIAL: u64 = 6;
    pub const SPATIAL: u64 = 7;
    pub const TEMPORAL: u64 = 8;
    pub const HEAD: u64 = 9;
}
