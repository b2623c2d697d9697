//! Deterministic seed derivation.
//!
//! Every random draw in the crate (sample noise, model-query randomness,
//! dataset generation, input shuffling) comes from a ChaCha stream whose seed
//! is derived here from a master seed and a path of tags. Each consumer gets
//! its own stream, so results do not depend on evaluation order or worker
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag for per-sample Gaussian noise draws.
pub const STREAM_SAMPLE: u64 = 0x01;
/// Stream tag for model-query seeds (consumed by stochastic defenses).
pub const STREAM_QUERY: u64 = 0x02;
/// Stream tag for clean-classification checks in the harness.
pub const STREAM_EVAL: u64 = 0x03;
/// Stream tag for per-input attack seeds.
pub const STREAM_INPUT: u64 = 0x04;
/// Stream tag for transfer-matrix evaluation queries.
pub const STREAM_TRANSFER: u64 = 0x05;
/// Stream tag for pool/input selection shuffles.
pub const STREAM_SELECT: u64 = 0x06;
/// Stream tag for initializer jitter.
pub const STREAM_JITTER: u64 = 0x07;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of tags.
///
/// The same `(master, path)` always yields the same child; distinct paths
/// yield decorrelated children.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut state = mix(master);
    for &tag in path {
        state = mix(state ^ mix(tag));
    }
    state
}

/// RNG for a derived seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
