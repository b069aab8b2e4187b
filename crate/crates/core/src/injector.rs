//! Independent Bernoulli bit-flips over a stored weight buffer.
//!
//! Sampling draws the flip count `k ~ Binomial(n, ber)` first and then a
//! uniform `k`-subset of bit positions. The joint law is identical to `n`
//! independent coin tosses, at O(k) cost for the sparse rates of interest.

use rand::seq::index;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::codec::BitBuffer;
use crate::error::{Error, Result};
use crate::numerics::{Rng, StreamDomain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub ber: f64,
    pub seed: u64,
    pub round: u64,
}

impl FaultConfig {
    pub fn new(ber: f64, seed: u64, round: u64) -> Result<Self> {
        let cfg = FaultConfig { ber, seed, round };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ber) {
            return Err(Error::Config(format!("BER must lie in [0, 1], got {}", self.ber)));
        }
        Ok(())
    }

    /// The stream that owns this round's flip pattern.
    pub fn rng(&self) -> Rng {
        Rng::stream(self.seed, StreamDomain::Fault, self.round)
    }
}

/// Sorted, unique bit indices to flip among `bit_count` bits.
///
/// Panics if `cfg.ber` is outside `[0, 1]`; use [`FaultConfig::new`] to validate.
pub fn flip_positions(bit_count: usize, cfg: &FaultConfig) -> Vec<usize> {
    assert!((0.0..=1.0).contains(&cfg.ber), "BER out of range: {}", cfg.ber);
    if bit_count == 0 || cfg.ber == 0.0 {
        return Vec::new();
    }
    if cfg.ber == 1.0 {
        return (0..bit_count).collect();
    }
    let mut rng = cfg.rng();
    let k = Binomial::new(bit_count as u64, cfg.ber)
        .expect("validated probability")
        .sample(&mut rng) as usize;
    if k == 0 {
        return Vec::new();
    }
    if k <= bit_count / 16 {
        let mut picked = index::sample(&mut rng, bit_count, k).into_vec();
        picked.sort_unstable();
        picked
    } else {
        selection_sample(&mut rng, bit_count, k)
    }
}

/// Sequential selection sampling (Knuth's Algorithm S): a uniform `k`-subset
/// of `0..n` produced in increasing order.
fn selection_sample(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut needed = k;
    for i in 0..n {
        if needed == 0 {
            break;
        }
        let remaining = n - i;
        if rng.next_f64() * (remaining as f64) < needed as f64 {
            out.push(i);
            needed -= 1;
        }
    }
    out
}

/// XOR the given bit positions into a copy of `b`.
pub fn apply_flips(b: &BitBuffer, positions: &[usize]) -> BitBuffer {
    let mut out = b.clone();
    for &p in positions {
        out.flip_bit(p);
    }
    out
}

/// Returns the faulty buffer and the number of flipped bits. `b` is untouched.
pub fn inject(b: &BitBuffer, cfg: &FaultConfig) -> (BitBuffer, u64) {
    let positions = flip_positions(b.bit_len(), cfg);
    (apply_flips(b, &positions), positions.len() as u64)
}
