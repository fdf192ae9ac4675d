//! Seeded random streams. Every replica of an experiment draws from its own
//! ChaCha stream selected by `(seed, replica)`, so replicas can run in any
//! order or in parallel and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream `replica` of the generator keyed by `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}
