//! Seeding conventions.
//!
//! All randomness in the crate flows through `Xoshiro256PlusPlus`, seeded
//! explicitly. Derived streams are obtained by hashing a parent seed with a
//! stream index so that independent components (train/test draws, retry
//! attempts, per-iteration sketches) never share a stream.

use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// RNG for a root seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Deterministic child seed for stream `stream` of parent `seed`.
///
/// SplitMix64 finalizer over the pair; collision-free enough for the handful
/// of streams each component uses.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for stream `stream` of parent `seed`.
pub fn rng_for_stream(seed: u64, stream: u64) -> Rng {
    rng_from_seed(derive_seed(seed, stream))
}
