//! Seeding discipline.
//!
//! Every random quantity in the crate flows from a single `u64` seed.
//! Parallel work derives one child seed per task index, so results do not
//! depend on scheduling or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Root generator for a seed. ChaCha8 is platform-stable, so identical
/// seeds give identical streams everywhere.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive the seed for task `index` under `seed`.
///
/// The mixing keeps nearby (seed, index) pairs uncorrelated, so
/// `child_seed(s, 1)` and `child_seed(s + 1, 0)` do not collide the way a
/// plain `seed + index` would.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

/// Generator for task `index` under `seed`.
pub fn child_rng(seed: u64, index: u64) -> ChaCha8Rng {
    seeded(child_seed(seed, index))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
