//! Deterministic RNG streams derived from a single root seed.
//!
//! Every consumer of randomness (network init, batch sampling, evaluation
//! starts, ...) draws from its own ChaCha stream so that results do not
//! depend on call order or worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Randomness consumers, one stream per variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    NetworkInit,
    TrainBatch,
    BoundaryBatch,
    PeriodicBatch,
    MeanStateCost,
    EvalStarts,
    Custom(u64),
}

impl Stream {
    fn index(self) -> u64 {
        match self {
            Stream::NetworkInit => 1,
            Stream::TrainBatch => 2,
            Stream::BoundaryBatch => 3,
            Stream::PeriodicBatch => 4,
            Stream::MeanStateCost => 5,
            Stream::EvalStarts => 6,
            Stream::Custom(n) => 1000 + n,
        }
    }
}

/// Counter-based stream split: same root seed, disjoint streams.
pub fn rng(root_seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(stream.index());
    rng
}
