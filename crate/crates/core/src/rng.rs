//! Seeded random streams, one per concern, so that switching one part of a
//! run on or off does not shift the draws seen by the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    SourceImages = 1,
    TargetImages,
    Degradation,
    ModelInit,
    SourceTraining,
    Patches,
    Gumbel,
    Routing,
    Validation,
    AdaptInit,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
