//! Seeded, platform-stable random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Independent purposes drawn from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    GeneratorInit = 1,
    DiscriminatorInit = 2,
    Shuffle = 3,
    Dropout = 4,
    Synthetic = 5,
    DiscriminatorBatch = 6,
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A generator for `purpose` that does not overlap other purposes of the
/// same seed.
pub fn stream(seed: u64, purpose: Stream) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
