//! Deterministic seeded substreams.
//!
//! Every source of randomness in the crate derives a `ChaCha8Rng` from a
//! root seed plus a label path (e.g. `(seed, [STREAM_VELOCITY, particle,
//! iter])`). Substreams are independent of evaluation order, so parallel
//! callers cannot perturb results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels; keeps unrelated substreams from colliding.
pub mod stream {
    pub const WEIGHT_INIT: u64 = 0x01;
    pub const SHUFFLE: u64 = 0x02;
    pub const AUGMENT: u64 = 0x03;
    pub const SPLIT: u64 = 0x04;
    pub const SWARM_INIT: u64 = 0x05;
    pub const VELOCITY: u64 = 0x06;
    pub const SCENE_LAYOUT: u64 = 0x07;
    pub const NOISE_LIDAR: u64 = 0x08;
    pub const NOISE_SAR: u64 = 0x09;
    pub const NOISE_OPTICAL: u64 = 0x0a;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a generator for `(seed, ids...)`. Same arguments, same stream.
pub fn substream(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &id in ids {
        state = splitmix64(state ^ id.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    ChaCha8Rng::seed_from_u64(state)
}
