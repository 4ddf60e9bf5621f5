//! Counter-based noise streams.
//!
//! Every random draw is addressed by `(seed, rollout, step)`, so rollouts can
//! be generated in any order (or in parallel) without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved per step inside one rollout's ChaCha stream.
const WORDS_PER_STEP: u128 = 1 << 20;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed, e.g. one per optimizer iteration.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// The RNG for step `step` of rollout `rollout`.
pub fn noise_stream(seed: u64, rollout: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rollout);
    rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    rng
}
