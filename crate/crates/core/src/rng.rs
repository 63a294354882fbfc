//! Counter-based random streams.
//!
//! Every random draw in the engine comes from a stream addressed by
//! `(root seed, purpose, t, j)`, so results never depend on how work is
//! scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for; distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Propagate,
    Resample,
    Backward,
    Simulate,
    Observe,
    Chain,
    Derive,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Propagate => 0x5052_4f50,
            Purpose::Resample => 0x5245_5341,
            Purpose::Backward => 0x4241_434b,
            Purpose::Simulate => 0x5349_4d55,
            Purpose::Observe => 0x4f42_5345,
            Purpose::Chain => 0x4348_4149,
            Purpose::Derive => 0x4445_5249,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The stream for `(seed, purpose, t, j)`. `t` and `j` must fit in 32 bits.
pub fn stream(seed: u64, purpose: Purpose, t: u64, j: u64) -> StreamRng {
    debug_assert!(t <= u32::MAX as u64 && j <= u32::MAX as u64);
    let mut state = seed ^ purpose.tag().rotate_left(32);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((t << 32) | (j & 0xffff_ffff));
    rng
}

/// A fresh root seed derived from `seed` for sub-computation `k`
/// (e.g. one particle filter run per MCMC iteration).
pub fn derive_seed(seed: u64, purpose: Purpose, k: u64) -> u64 {
    let mut rng = stream(seed, Purpose::Derive, purpose.tag(), k & 0xffff_ffff);
    rng.next_u64() ^ (k >> 32)
}
