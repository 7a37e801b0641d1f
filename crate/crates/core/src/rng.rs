//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic component (map generation, environment dynamics, token
//! sampling, episode selection) draws from its own ChaCha stream whose seed is
//! derived from a base seed plus a path of integers. Streams never share state,
//! so the order in which episodes run (sequential or parallel) cannot change
//! any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Builds an RNG for the stream identified by `(base, path)`.
pub fn stream(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}

/// Stream tags. Keeping them in one place avoids accidental collisions.
pub mod tag {
    pub const INITIAL_STATE: u64 = 1;
    pub const DYNAMICS: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const OPPONENT: u64 = 4;
    pub const EPISODE: u64 = 5;
    pub const SELECTION: u64 = 6;
    pub const INIT_PARAMS: u64 = 7;
}
