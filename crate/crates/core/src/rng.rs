//! Seed plumbing. Every stochastic component draws from a `ChaCha8Rng` whose
//! seed is derived from a run seed and a stream tag, so adding a new consumer
//! never perturbs the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// splitmix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(seed ^ mix(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags. Kept in one place so collisions are visible.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const TIE_BREAK: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const IS_SAMPLE: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const RELEVANCE: u64 = 8;
    pub const MEANS: u64 = 9;
    pub const SAMPLES: u64 = 10;
    pub const ENSEMBLE: u64 = 11;
    pub const MC: u64 = 12;
}
