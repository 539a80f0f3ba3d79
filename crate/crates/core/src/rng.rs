//! Seed derivation for reproducible, scheduling-independent randomness.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from the run seed
//! plus a stream tag and an index, so work items can run in any order (or in
//! parallel) and still see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags; keep these stable, changing one changes every artifact.
pub mod stream {
    pub const DATAGEN_LABELS: u64 = 1;
    pub const DATAGEN_ROW: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const FOREST_TREE: u64 = 4;
    pub const BOOST_ROUND: u64 = 5;
    pub const MLP_INIT: u64 = 6;
    pub const MLP_SHUFFLE: u64 = 7;
    pub const HPO_DESIGN: u64 = 8;
    pub const HPO_CANDIDATES: u64 = 9;
    pub const HPO_SPLIT: u64 = 10;
    pub const MODEL: u64 = 11;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived(seed: u64, stream: u64, index: u64) -> Rng {
    seeded(derive_seed(seed, stream, index))
}
