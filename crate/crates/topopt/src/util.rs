//! Deterministic seed-stream derivation. Every random choice in the pipeline
//! draws from a ChaCha8 stream keyed by (master seed, stream tag, index), so
//! components reproduce independently of each other and of thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step; used only to expand seeds, never as the sampling RNG.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// 32-byte ChaCha seed derived from `(master, tag, index)`.
pub fn stream_seed(master: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut state = master ^ 0x6a09e667f3bcc908;
    for &b in tag.as_bytes() {
        state ^= u64::from(b);
        splitmix64(&mut state);
    }
    state ^= index;
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    seed
}

/// Deterministic RNG for the named stream.
pub fn stream_rng(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(master, tag, index))
}
