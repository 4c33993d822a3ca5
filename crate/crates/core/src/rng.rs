//! Seeded randomness. Every stochastic routine takes an explicit 64-bit seed;
//! independent streams are derived by hashing `(seed, counter)` so replicates
//! and Monte Carlo draws can be evaluated in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `counter` from `seed`.
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    mix64(mix64(seed) ^ mix64(counter.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
