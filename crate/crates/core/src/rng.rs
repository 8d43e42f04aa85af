//! Seeded random streams.
//!
//! Every stochastic path draws from its own ChaCha stream derived from the run
//! seed, so adding draws to one stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream identifiers.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const LATENT: u64 = 2;
    pub const CONDITION: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const PERTURB: u64 = 5;
    pub const PROBE: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const NOISE: u64 = 9;
}

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed; used when one run spawns several seeded sub-runs.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
