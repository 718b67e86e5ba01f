//! Seeded RNG streams.
//!
//! Every random draw in the crate goes through a `ChaCha8Rng` built here, so a
//! seed plus a stream id fully determines the sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used by initialization and training.
pub mod stream {
    pub const W_HH: u64 = 0;
    pub const W_IH: u64 = 1;
    pub const W_HO: u64 = 2;
    pub const SHUFFLE: u64 = 10;
    pub const NOISE: u64 = 11;
    pub const SEARCH: u64 = 20;
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn seeded_stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
