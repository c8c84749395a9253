//! Reproducible random streams keyed by `(seed, stream_id)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tree::mix64;

/// A ChaCha8 keystream: the seed fixes the key, the stream id selects one of
/// 2^64 independent counter sequences.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        for (k, chunk) in key.chunks_mut(8).enumerate() {
            chunk.copy_from_slice(&mix64(seed ^ (k as u64).wrapping_mul(0xa076_1d64_78bd_642f)).to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream_id);
        RngStream { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream for a replicate or sub-task, a pure function of the parent
    /// identity and `tag`.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed, mix64(self.stream_id ^ mix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`, safe to take logarithms of.
    pub fn uniform_open0(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// One uniform in `[0, 1)` addressed by `(seed, key)` without building a
/// stream. Used for single-draw decisions such as letter choices.
pub fn keyed_uniform(seed: u64, key: u64) -> f64 {
    let z = mix64(mix64(seed ^ 0x6a09_e667_f3bc_c909) ^ key);
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
