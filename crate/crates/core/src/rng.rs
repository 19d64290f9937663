//! Named, seedable random streams.
//!
//! Every stochastic step in the pipeline draws from its own stream, derived
//! from a root seed and a path of integer labels. Two streams with different
//! paths are statistically independent, and the derivation does not depend on
//! the order in which streams are requested, so results are insensitive to
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The concrete generator used for all sampling.
pub type LabRng = ChaCha8Rng;

/// Stream labels for the pipeline stages.
pub mod label {
    pub const PROMPTS: u64 = 0x7072_6f6d;
    pub const LABELS: u64 = 0x6c61_6265;
    pub const SUBSAMPLE: u64 = 0x7375_6273;
    pub const BATCHES: u64 = 0x6261_7463;
    pub const EVAL: u64 = 0x6576_616c;
    pub const INIT: u64 = 0x696e_6974;
    pub const HASH: u64 = 0x6861_7368;
    pub const SECOND: u64 = 0x7365_636f;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a path of labels into a single 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

/// Returns the random stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> LabRng {
    LabRng::seed_from_u64(derive_seed(seed, path))
}
