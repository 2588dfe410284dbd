//! Deterministic random streams.
//!
//! Every stochastic step of a run draws from a stream keyed by
//! `(seed, stage, index)`, so results do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Pipeline stages that own disjoint stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Theta = 1,
    Field = 2,
    Perturb = 3,
    Posterior = 4,
    PosteriorField = 5,
    Truth = 6,
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Substream for draw `index` of `stage`.
pub fn substream(seed: u64, stage: Stage, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage as u64) << 48) ^ index);
    rng
}
