//! Seeded random sources.
//!
//! Every random consumer draws from `ChaCha8Rng::seed_from_u64(seed)` with
//! an explicit stream id, so parallel chains (shards, seeds, `n` values)
//! never overlap and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type WalkRng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> WalkRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
