//! Counter-based seeding: every stage derives its own stream from the
//! experiment seed and a path of indices, so adding a stage never shifts
//! the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a path of stream indices.
pub fn stream_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(seed), |acc, &i| splitmix(acc ^ splitmix(i)))
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, path))
}

/// Stage tags used as the first path element.
pub mod stage {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const SC: u64 = 3;
    pub const TEST_DATA: u64 = 4;
    pub const SC_DATA: u64 = 5;
    pub const ESTIMATE: u64 = 6;
    pub const ORACLE: u64 = 7;
    pub const OFFLINE_TABLE: u64 = 8;
    pub const MMD: u64 = 9;
}
