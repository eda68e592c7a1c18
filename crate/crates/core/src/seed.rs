//! Seed derivation shared by every stochastic stage.
//!
//! All per-item randomness is keyed by a mixed 64-bit seed so results do not
//! depend on iteration or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN_GAMMA);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a key into an independent-looking child seed.
pub fn mix(seed: u64, key: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ key.wrapping_mul(GOLDEN_GAMMA).rotate_left(17))
}

/// Stream salts so different consumers of one seed never share a stream.
pub mod salt {
    pub const EVENT: u64 = 0x45_56_45_4E_54;
    pub const NOISE: u64 = 0x4E_4F_49_53_45;
    pub const SPLIT: u64 = 0x53_50_4C_49_54;
    pub const INIT: u64 = 0x49_4E_49_54;
    pub const TRAIN: u64 = 0x54_52_41_49_4E;
    pub const PROJECT: u64 = 0x50_52_4F_4A;
    pub const SVM: u64 = 0x53_56_4D;
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
