//! Seeded, portable random streams.
//!
//! Everything random in the crate draws from ChaCha8 so that codebooks,
//! datasets, initial weights and shuffles reproduce bit-for-bit on every
//! platform. Independent consumers use distinct stream ids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub(crate) mod stream {
    pub const CODEBOOK: u64 = 1;
    pub const HEURISTIC: u64 = 2;
    pub const DATASET: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SPLIT: u64 = 5;
    /// Shuffle streams start here; epoch `e` uses `SHUFFLE_BASE + e`.
    pub const SHUFFLE_BASE: u64 = 1 << 32;
}

/// Generator for `(seed, stream)`.
pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
