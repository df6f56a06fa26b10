//! Counter-based random streams.
//!
//! A [`SeededStream`] is a ChaCha8 keystream keyed by the 64-bit master seed
//! and positioned on the 64-bit stream id, so `(master_seed, stream_id)`
//! fully determines the sequence no matter which thread consumes it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SeededStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl SeededStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self { master_seed, stream_id, rng }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Stream for a chunk of an experiment identified by `tag`, e.g. the
    /// (δ index, chunk index) pair of a sweep.
    pub fn for_chunk(master_seed: u64, tag: u64, chunk: u64) -> Self {
        Self::new(master_seed, mix(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ mix(chunk)))
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngCore for SeededStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
