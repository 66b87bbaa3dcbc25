//! Deterministic random-stream derivation.
//!
//! All randomness in the crate flows from a [`StreamKey`]: a 64-bit key that
//! can be split into labelled child keys and expanded into a concrete RNG.
//! Parallel code derives one key per task (per bootstrap sample, per
//! observation) so results are bitwise independent of the worker count, and
//! RNG state is never shared between tasks.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer. Not cryptographic; used only to decorrelate
/// experiment substreams.
fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Handle to a deterministic random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(splitmix64(seed))
    }

    /// Derive an independent child stream. Distinct labels on the same
    /// parent yield decorrelated streams; the derivation is deterministic.
    pub fn child(self, label: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(label ^ 0xa5a5_a5a5_5a5a_5a5a)))
    }

    /// The raw key, usable as a seed for nested configs.
    pub fn value(self) -> u64 {
        self.0
    }

    /// Expand the key into a concrete RNG.
    pub fn rng(self) -> ChaCha12Rng {
        let mut state = self.0;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha12Rng::from_seed(seed)
    }
}
