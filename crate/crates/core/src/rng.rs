//! Deterministic random-stream derivation.
//!
//! Every consumer of randomness owns a `ChaCha8Rng` seeded from
//! `(master seed, index, tag)` through SplitMix64, so a run is reproducible
//! from its master seed regardless of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag for per-device delay sampling.
pub const TAG_DELAYS: u64 = 0x6465_6c61_7973;
/// Stream tag for randomized policies.
pub const TAG_POLICY: u64 = 0x706f_6c69_6379;
/// Stream tag for replication seeds.
pub const TAG_REPLICATION: u64 = 0x7265_706c_6963;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `index` under `tag`.
pub fn derive_seed(seed: u64, index: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ index) ^ tag)
}

pub fn stream(seed: u64, index: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index, tag))
}
