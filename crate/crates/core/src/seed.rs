//! Deterministic seed derivation. Every random stream in the crate is a
//! `ChaCha8Rng` keyed by `derive(base, tag, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ tag) ^ index)
}

pub fn rng(base: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tag, index))
}

// Stream tags.
pub const BANK: u64 = 1;
pub const SOURCE: u64 = 2;
pub const NOISE: u64 = 3;
pub const PAIRS: u64 = 4;
pub const GAIN: u64 = 5;
pub const TEST: u64 = 6;
pub const KMEANS: u64 = 7;
pub const SUBSET: u64 = 8;
pub const CALIBRATION: u64 = 9;
pub const SYNTH: u64 = 10;
