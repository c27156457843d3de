use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent random streams derived from one master seed.
///
/// Each component draws from its own ChaCha stream so that, for example,
/// changing how often evaluation runs never shifts the training draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 0,
    Init = 1,
    LabeledBatch = 2,
    UnlabeledBatch = 3,
    BalancedBatch = 4,
    Augment = 5,
    Check = 6,
}

/// Seeded ChaCha8 generator.
///
/// ChaCha8 output is specified bit-for-bit and independent of platform word
/// size or endianness, so a seed identifies one stream everywhere.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A fresh generator on `stream` of this seed, positioned at its start.
    pub fn for_stream(seed: u64, stream: Stream) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream as u64);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

impl RngCore for Rng {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn chacha8_reference_output() {
        // Values from an independent ChaCha8 + PCG32 seed-expansion
        // implementation; a dependency bump that changes the stream fails here.
        let mut r = Rng::new(0);
        assert_eq!(r.next_u64(), 0xb585_f767_a79a_3b6c);
        assert_eq!(r.next_u64(), 0x7746_a55f_bad8_c037);
        assert_eq!(Rng::new(42).next_u64(), 0xae90_bfb5_395d_5ba1);
        let mut s = Rng::for_stream(42, Stream::Augment);
        assert_eq!(s.next_u64(), 0x5a4c_b496_8c34_03e3);
        assert_eq!(s.next_u64(), 0xa06b_31ce_20af_1fb4);
    }

    #[test]
    fn streams_are_distinct() {
        let mut a = Rng::for_stream(1, Stream::Data);
        let mut b = Rng::for_stream(1, Stream::Init);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
