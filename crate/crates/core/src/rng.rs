//! Seeded random streams.
//!
//! Every stochastic step (initialization, bootstrap, splits, synthetic noise)
//! draws from a ChaCha8 stream keyed by a `u64` seed. ChaCha is counter-based,
//! so the same seed yields the same sequence on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-stream for a given purpose, so that e.g. the split and the
/// noise of one dataset do not share draws.
pub fn stream(seed: u64, purpose: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}
