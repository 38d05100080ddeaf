//! Seeded random streams. Every consumer derives its generator from the run
//! seed plus a fixed stream tag, so components never share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub(crate) mod stream {
    pub const CLUSTER_POS: u64 = 3;
    pub const CLUSTER_NEG: u64 = 4;
    pub const SAMPLE: u64 = 5;
    pub const UNIFORM: u64 = 6;
    pub const GEN: u64 = 7;
    pub const ORACLE: u64 = 8;
    pub const REFERENCE: u64 = 9;
}

/// Generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a base seed with an index (trial number, tree node, ...).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
