//! Seeded random streams. Every stochastic routine takes an explicit seed so
//! runs are reproducible bit for bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded by `master`.
pub fn stream(master: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// A per-item seed derived from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    stream(master, index).next_u64()
}
