//! Deterministic random streams.
//!
//! A single master seed fans out into independent ChaCha streams keyed by an
//! operation name and an integer id (usually a state index), so that results do
//! not depend on the order in which states or scenarios are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the operation name, mixed with the seed and id.
pub fn stream_seed(seed: u64, op: &str, id: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in op.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(seed ^ h) ^ splitmix64(id.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn stream(seed: u64, op: &str, id: u64) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(seed, op, id))
}
