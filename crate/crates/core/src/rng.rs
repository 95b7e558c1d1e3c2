//! Seeded, splittable random streams.
//!
//! Every stochastic routine takes its generator explicitly. Independent
//! sub-streams (one per Monte Carlo draw, probe trial or replication) are
//! derived from a master seed through ChaCha's 64-bit stream counter, so any
//! subset can be regenerated without replaying the others.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as SimRng;

/// Generator for the master seed itself (stream 0).
pub fn from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent sub-stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
