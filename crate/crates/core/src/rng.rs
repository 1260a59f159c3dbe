//! Deterministic RNG streams.
//!
//! All randomness in the toolkit flows from a single 64-bit seed through
//! named sub-streams, so that runs are reproducible across platforms and
//! independent of worker scheduling. A stream is identified by a label
//! (e.g. `"bootstrap"`) and an index (e.g. the replication number).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the RNG for sub-stream `(label, index)` of `seed`.
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ fnv1a(label.as_bytes())) ^ index);
    ChaCha8Rng::seed_from_u64(mixed)
}
