//! Seeded random streams.
//!
//! Every generator in the crate is a ChaCha20 stream keyed by `(seed, stream)`.
//! ChaCha is counter based, so distinct stream ids give independent sequences
//! from the same seed; each consumer uses its own stream id constant.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

pub const SAMPLE: u64 = 1;
pub const BANK: u64 = 2;
pub const PLANT: u64 = 3;
pub const MINIBATCH: u64 = 4;
pub const MONTE_CARLO: u64 = 5;
pub const SDE: u64 = 6;
pub const FAMILY: u64 = 7;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed, used for sweeps over replicas.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
