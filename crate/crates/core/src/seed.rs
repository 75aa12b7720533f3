//! Deterministic sub-seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a 64-bit
//! value obtained by mixing a root seed with one or more stream indices, so
//! parallel work items draw from independent streams regardless of the order
//! in which they execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `seed` with a sequence of stream indices.
pub fn derive(seed: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(GOLDEN))))
}

pub fn rng(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream))
}

// Stream tags keep the derived seeds of unrelated consumers apart.
pub(crate) const TAG_ASSIGN: u64 = 1;
pub(crate) const TAG_FOLDS: u64 = 2;
pub(crate) const TAG_BOOTSTRAP: u64 = 3;
pub(crate) const TAG_DGP: u64 = 4;
pub(crate) const TAG_MC: u64 = 5;
