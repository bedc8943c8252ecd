//! Seeded generators. Every random consumer derives its own ChaCha stream
//! from a `(seed, stream)` pair, so results do not depend on thread count
//! or on the order in which independent work items run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
