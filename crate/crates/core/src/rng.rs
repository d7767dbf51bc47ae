//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is a
//! pure function of the run seed and a short path of indices (step, example,
//! purpose). Evaluating examples in any order, or in parallel, therefore
//! reproduces the sequential results bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a path of indices into a new 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, path))
}

/// Purpose tags used as the first element of substream paths.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const WARMUP: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const WEAK: u64 = 4;
    pub const STRONG: u64 = 5;
    pub const LABELED: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const DATA: u64 = 8;
    pub const PROBLEM: u64 = 9;
}
