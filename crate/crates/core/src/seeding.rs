//! Deterministic random streams.
//!
//! Every random decision in the pipeline draws from a ChaCha8 generator keyed by
//! `(seed, stream)`, so results do not depend on thread scheduling or call order
//! across independent consumers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Named stream identifiers so that unrelated consumers never share a stream.
pub mod streams {
    pub const PARTITION: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const NEURAL_INIT: u64 = 3;
    pub const NEURAL_SHUFFLE: u64 = 4;
    pub const CHANNEL: u64 = 5;
    pub const GMMA: u64 = 6;
    pub const RMMA: u64 = 7;
    pub const POLICY_INIT: u64 = 8;
    pub const SYNTH: u64 = 9;
    pub const MUTATE: u64 = 10;
}

/// Mixes `index` into `seed`; used where a whole family of streams is needed
/// (one per generation, per item, per curator).
pub fn mix(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
