//! Seeded random streams.
//!
//! Every random draw in the crate goes through a ChaCha8 generator keyed by
//! a user seed and a stream id, so independent consumers (weights, connector
//! sampling, noise, Latin hypercube) never share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used across the crate.
pub mod stream {
    pub const WEIGHTS: u64 = 1;
    pub const CONNECTORS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const HYPERCUBE: u64 = 4;
    pub const SURGERY: u64 = 5;
    pub const EXTRAS: u64 = 6;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
