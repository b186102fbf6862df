//! Seeded random streams.
//!
//! Every source of randomness in a run (parameter init, lot sampling,
//! dropout masks, gradient noise, batch shuffling) draws from its own ChaCha
//! stream derived from the run seed, so one source can be varied while the
//! others are held fixed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Purpose tag used as the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Sampling = 2,
    Dropout = 3,
    Noise = 4,
    Shuffle = 5,
    Subset = 6,
}

/// Returns the generator for `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// SplitMix64 finalizer; used to derive independent keys from counters.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-sample dropout generators keyed by `(seed, step, index)`.
///
/// Masks depend only on the key, never on which worker evaluates the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutStream {
    seed: u64,
}

impl DropoutStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn for_sample(&self, step: u64, index: u64) -> ChaCha20Rng {
        let key = mix64(mix64(self.seed ^ mix64(step)) ^ index);
        let mut rng = ChaCha20Rng::seed_from_u64(key);
        rng.set_stream(Stream::Dropout as u64);
        rng
    }
}
