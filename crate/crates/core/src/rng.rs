//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! `(master seed, purpose)` and selected by the path index through the
//! ChaCha stream counter. A path's draws therefore never depend on which
//! thread ran it or on how many other paths were simulated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for; distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Chain,
    Noise,
    /// Second Brownian block of a coupled run (used before the coupling time).
    CoupledNoise,
    Falsifier,
    Experiment(u32),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Chain => 1,
            Purpose::Noise => 2,
            Purpose::CoupledNoise => 3,
            Purpose::Falsifier => 4,
            Purpose::Experiment(k) => 0x100 + k as u64,
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

pub fn stream(seed: u64, path: u64, purpose: Purpose) -> Stream {
    let mut state = seed ^ purpose.tag().wrapping_mul(0xd6e8_feb8_6659_fd93);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(path);
    rng
}
