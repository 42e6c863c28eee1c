//! Seeded, splittable random streams.
//!
//! Every stochastic operation takes an explicit `u64` seed. Sub-seeds for
//! independent work items (trials, epochs, graphs in a dataset) are derived
//! with [`split`], so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Creates the generator for `seed`.
pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed for work item `index` under `seed`.
pub fn split(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Generator for work item `index` under `seed`.
pub fn rng_for(seed: u64, index: u64) -> Rng {
    rng(split(seed, index))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
