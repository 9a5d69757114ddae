//! Counter-based RNG streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, epoch, sequence, component, sample)`. Streams are independent of
//! evaluation order and worker count, so estimates are bit-reproducible under
//! any parallel schedule.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Component id used for draws of the pairwise (transition) functions, which
/// are shared across mixture components within a sample index.
pub const PAIRWISE_COMPONENT: u64 = u64::MAX;

/// Epoch tag for objective evaluations, kept apart from training epochs.
pub const EVAL_EPOCH: u64 = u64::MAX - 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn absorb(state: u64, field: u64) -> u64 {
    splitmix64(state ^ field.wrapping_mul(0xff51afd7ed558ccd))
}

/// Key derivation for one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub epoch: u64,
    pub sequence: u64,
    pub component: u64,
    pub sample: u64,
}

impl StreamKey {
    pub fn rng(&self) -> ChaCha8Rng {
        // Chained absorption: every word depends on all fields before it, so
        // a change in any one field changes the key.
        let h0 = absorb(self.seed ^ 0x6a09e667f3bcc908, self.epoch);
        let h1 = absorb(h0, self.sequence);
        let h2 = absorb(h1, self.component);
        let h3 = absorb(h2, self.sample);
        let mut key = [0u8; 32];
        for (chunk, w) in key.chunks_exact_mut(8).zip([h0, h1, h2, h3]) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

pub fn stream_rng(seed: u64, epoch: u64, sequence: u64, component: u64, sample: u64) -> ChaCha8Rng {
    StreamKey {
        seed,
        epoch,
        sequence,
        component,
        sample,
    }
    .rng()
}
