//! Seed derivation. Every random stream in the simulator is a ChaCha8
//! generator keyed by a 64-bit seed mixed from the experiment seed and a
//! stream-specific tag, so streams never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of a string; stable across platforms and releases.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for one client's local training in one round.
pub fn client_round_seed(global: u64, client_id: &str, round: usize) -> u64 {
    let h = mix64(global);
    let h = mix64(h ^ fnv1a(client_id));
    mix64(h ^ round as u64)
}

/// Seed for a named stream (cohort sampling, dataset split, ...).
pub fn stream_seed(global: u64, tag: &str, index: u64) -> u64 {
    mix64(mix64(global ^ fnv1a(tag)) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
