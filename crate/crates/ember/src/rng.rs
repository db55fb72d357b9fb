//! Seed derivation and reproducible random-number streams.
//!
//! All randomness in the crate flows from caller-provided `u64` seeds.
//! Independent sub-streams (per pixel-day, per sample, per stratum) are
//! derived by mixing the base seed with a stream tag, so batches can be
//! evaluated in any order — or in parallel — without changing the output.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer; good avalanche behaviour for seed mixing.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a base seed and a stream tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// RNG for a given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// RNG for the sub-stream `tag` of `seed`.
pub fn stream_rng(seed: u64, tag: u64) -> ChaCha12Rng {
    rng_from_seed(derive_seed(seed, tag))
}
