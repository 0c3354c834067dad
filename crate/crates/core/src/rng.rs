//! Seeded random streams.
//!
//! Every stochastic component draws from a `ChaCha8Rng` whose seed is derived
//! from a parent seed and a path of integer tags with SplitMix64 mixing. A
//! grid run, for example, derives `(seed, cell, repetition, purpose)` so that
//! each draw is reproducible regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Stream purposes used when deriving child seeds.
pub mod purpose {
    pub const DATA: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const TUNE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const TEST_DATA: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child(base: u64, tags: &[u64]) -> SeededRng {
    seeded(derive_seed(base, tags))
}
