//! Counter-based random streams.
//!
//! Every subject of every replicate draws from its own ChaCha stream, keyed
//! by the master seed and the (replicate, subject) pair, so generated data do
//! not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream for `(replicate, index)` under `seed`.
pub fn stream(seed: u64, replicate: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ replicate.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index.wrapping_add(replicate.rotate_left(32)));
    rng
}
