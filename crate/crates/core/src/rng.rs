//! Deterministic seed derivation for per-unit random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a stream tag and an index into a new seed.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(tag)) ^ index)
}

pub fn stream(base: u64, tag: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tag, index))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

// Stream tags keep independent uses of one base seed apart.
pub(crate) const TAG_ALLOC: u64 = 1;
pub(crate) const TAG_GAMMA: u64 = 2;
pub(crate) const TAG_ETA: u64 = 3;
pub(crate) const TAG_HYPER: u64 = 4;
pub(crate) const TAG_REPLICATE: u64 = 5;
pub(crate) const TAG_PREDICT: u64 = 6;
pub(crate) const TAG_PPC: u64 = 7;
pub(crate) const TAG_FOLD: u64 = 8;
pub(crate) const TAG_SIM: u64 = 9;
