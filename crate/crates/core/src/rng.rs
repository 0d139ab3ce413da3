//! Seed derivation and the random stream type used everywhere in the crate.
//!
//! Every stream is a ChaCha8 generator keyed from a 64-bit seed. ChaCha is a
//! counter-based cipher, so the values a stream produces depend only on its key
//! and never on which thread draws them or in which order streams are created.
//! Child seeds come from SplitMix64 finalization of the parent seed folded with
//! a list of integer tags, e.g. `(master_seed, i, j)` for the angle set of the
//! feature pair `(i, j)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain-separation tags for derived streams.
pub mod tag {
    pub const PAIR_ANGLES: u64 = 0x616e_676c_6573;
    pub const SHARED_ANGLES: u64 = 0x7368_6172_6564;
    pub const MIXING: u64 = 0x006d_6978;
    pub const DRAW_P: u64 = 0x64_7261_7750;
    pub const DRAW_Q: u64 = 0x64_7261_7751;
    pub const NOISE: u64 = 0x006e_6f69_7365;
    pub const FOLDS: u64 = 0x0066_6f6c_6473;
    pub const METHOD: u64 = 0x6d65_7468_6f64;
    pub const REPETITION: u64 = 0x0072_6570;
    pub const PROTOCOL: u64 = 0x0070_726f_746f;
    pub const TRIAL: u64 = 0x0074_7269_616c;
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(parent), |acc, &t| mix64(acc ^ mix64(t)))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
