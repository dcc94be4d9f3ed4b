//! Seed-derived random streams.
//!
//! Every randomized routine in the crate draws from a stream derived from a
//! master seed plus a path of integer tags (e.g. `[REPLICATE, r, SAMPLE, i]`).
//! Streams for distinct paths are independent for all practical purposes, so
//! work can be parallelized per sample or per replicate while producing
//! byte-identical results regardless of the schedule.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used throughout the crate; kept in one place so no two call
/// sites collide on the same derivation path.
pub mod tag {
    pub const SAMPLE_X: u64 = 0x5a;
    pub const NOISE: u64 = 0x6e;
    pub const PARTITION: u64 = 0x70;
    pub const REPLICATE: u64 = 0x72;
    pub const TRIAL: u64 = 0x74;
    pub const MC_RISK: u64 = 0x6d;
    pub const PACKING: u64 = 0x67;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha8 stream from `seed` and a tag path.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x853c_49e6_748f_ea9b;
    let mut key = [0u8; 32];
    // Absorb the path, then squeeze a 256-bit key.
    let mut acc = splitmix64(&mut state);
    for &t in path {
        state ^= t.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
        acc ^= splitmix64(&mut state);
    }
    let mut s = acc;
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
