//! Every random draw derives from one run seed through named sub-streams,
//! so changing how one stage consumes randomness leaves the others intact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Weight initialization.
    Init = 1,
    KMeans = 2,
    Batching = 3,
    /// Synthetic data generation.
    Synth = 4,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
