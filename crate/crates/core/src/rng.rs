//! Seed derivation. Every random draw in the pipeline comes from a
//! `ChaCha8Rng` whose seed is derived from the master seed and a key path,
//! so results never depend on thread scheduling or call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named sub-streams of the master seed.
pub mod tag {
    pub const INJECT: u64 = 0x696e_6a65_6374;
    pub const TRAIN: u64 = 0x74_7261_696e;
    pub const SCORE: u64 = 0x73_636f_7265;
    pub const EVAL: u64 = 0x6576_616c;
    pub const RUN: u64 = 0x72_756e;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const PATCH_VIEW: u64 = 0x70_6174_6368;
    pub const CONTEXT_VIEW: u64 = 0x63_7478;
    pub const NEGATIVE: u64 = 0x6e_6567;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a key path into a single 64-bit seed.
pub fn derive_seed(master: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(master: u64, key: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, key))
}
