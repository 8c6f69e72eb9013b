//! Seed derivation. Every generator draws from a ChaCha stream keyed by the
//! run seed plus a fixed stream label, so adding a consumer never shifts the
//! numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(seed), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn stream_rng(seed: u64, stream: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream))
}

// Stream labels.
pub const FLEET: u64 = 1;
pub const TRACES: u64 = 2;
pub const WORKLOAD: u64 = 3;
pub const KMEANS: u64 = 4;
pub const RNN_INIT: u64 = 5;
pub const RNN_SHUFFLE: u64 = 6;
pub const VELA: u64 = 7;
pub const FAILURES: u64 = 8;
pub const CERTIFIER: u64 = 9;
