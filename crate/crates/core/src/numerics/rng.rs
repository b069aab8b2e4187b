use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Purpose tags keeping the streams of unrelated consumers apart even when
/// they share a user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamDomain {
    General = 0,
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Fault = 4,
    Synth = 5,
}

/// Seeded ChaCha8 stream.
///
/// The key comes from `(seed, domain)` and the 64-bit ChaCha stream id from
/// the caller's index, so `Rng::stream(seed, Fault, round)` is a fixed,
/// platform-independent sequence for every Monte Carlo round.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    seed: u64,
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, StreamDomain::General, 0)
    }

    pub fn stream(seed: u64, domain: StreamDomain, index: u64) -> Self {
        let key = mix64(seed ^ mix64(domain as u64));
        let mut inner = ChaCha8Rng::seed_from_u64(key);
        inner.set_stream(index);
        Rng { inner, seed }
    }

    /// Derives an independent child generator, advancing this one by one draw.
    pub fn split(&mut self) -> Rng {
        let child_seed = self.inner.next_u64();
        let mut inner = ChaCha8Rng::seed_from_u64(mix64(child_seed));
        inner.set_stream(self.inner.get_stream());
        Rng {
            inner,
            seed: child_seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `n` draws in `[0, 1)`.
    pub fn uniform(&mut self, n: usize) -> Tensor {
        Tensor::from_vec((0..n).map(|_| self.next_f32()).collect())
    }

    pub fn next_f32(&mut self) -> f32 {
        self.inner.random::<f32>()
    }

    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn range_f32(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_f32()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f32 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
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
