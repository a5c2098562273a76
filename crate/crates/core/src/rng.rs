//! Seed discipline.
//!
//! Every random quantity comes from a ChaCha8 generator keyed by the run's
//! master seed, with the ChaCha stream number selecting the purpose. Streams
//! are independent counters over the same key, so drawing more directions
//! never shifts the initialization or shuffle sequences.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    DataGeometry = 3,
    LabelNoise = 4,
    CrrDirections = 5,
    EvalDirections = 6,
    Bootstrap = 7,
    Subset = 8,
    Spectrum = 9,
    Glyphs = 10,
}

pub fn seeded(master: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng
}

/// A sub-stream further split by a counter (e.g. the epoch index).
pub fn seeded_at(master: u64, stream: Stream, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((stream as u64) << 32 | (counter & 0xffff_ffff));
    rng
}
