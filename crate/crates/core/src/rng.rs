//! Seeded, substreamed random number generation.
//!
//! Every random object is drawn from a ChaCha8 generator keyed by the run
//! seed and a 64-bit stream index, so parallel replications are reproducible
//! regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Generator for stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream index for the pair `(major, minor)`, e.g. `(replication, batch)`.
///
/// Both halves must fit in 32 bits.
pub fn pair_stream(major: u64, minor: u64) -> u64 {
    assert!(major < 1 << 32 && minor < 1 << 32, "stream index out of range");
    (major << 32) | minor
}

/// Named purposes so independent consumers of one seed never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Observations = 1,
    Noise = 2,
    Initial = 3,
    Shuffle = 4,
}

/// Seed derived from a run seed and a purpose, for nesting streams.
pub fn derive_seed(seed: u64, purpose: Purpose) -> u64 {
    let mut rng = substream(seed, u64::MAX - purpose as u64);
    rng.random()
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
