//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha8 stream whose seed is
//! derived from the run seed and a stream label, so results do not depend on
//! the order in which components consume randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// One step of the SplitMix64 sequence.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of stream labels.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(base), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream(base: u64, labels: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, labels))
}

/// Stream labels used across the crate.
pub mod label {
    pub const ENV_RESET: u64 = 1;
    pub const POLICY_INIT: u64 = 2;
    pub const ACTION_NOISE: u64 = 3;
    pub const PPO_SHUFFLE: u64 = 4;
    pub const REWARD_MODEL: u64 = 5;
    pub const XNES: u64 = 6;
    pub const RESTART: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const CRITIC_INIT: u64 = 9;
    pub const DEMOS: u64 = 10;
}
