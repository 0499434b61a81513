//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a master seed plus a small tuple of stream coordinates, so
//! results never depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with stream coordinates into a new 64-bit seed.
pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(seed), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn stream(seed: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, coords))
}

// stream tags
pub(crate) const INIT: u64 = 1;
pub(crate) const SHUFFLE: u64 = 2;
pub(crate) const DROPOUT: u64 = 3;
pub(crate) const PERMUTE: u64 = 4;
pub(crate) const SYNTH: u64 = 5;
