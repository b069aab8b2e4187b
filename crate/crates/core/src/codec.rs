//! Stored weight encodings: the bits that sit on the fault-prone medium.
//!
//! Buffers are packed little-endian per element, which makes the global bit
//! index `element * bits_per_weight + bit` (bit 0 = least significant) line up
//! with `byte * 8 + bit_in_byte`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Q2.5 scale: 5 fraction bits.
pub const Q25_SCALE: f32 = 32.0;
pub const Q25_MIN: f32 = -4.0;
pub const Q25_MAX: f32 = 127.0 / 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StoredDType {
    Fp32,
    Fp16,
    /// Two's-complement 8-bit fixed point, 1 sign / 2 integer / 5 fraction bits.
    Q25,
}

impl StoredDType {
    pub const ALL: [StoredDType; 3] = [StoredDType::Fp32, StoredDType::Fp16, StoredDType::Q25];

    pub fn bits_per_weight(self) -> usize {
        match self {
            StoredDType::Fp32 => 32,
            StoredDType::Fp16 => 16,
            StoredDType::Q25 => 8,
        }
    }

    pub fn bytes_per_weight(self) -> usize {
        self.bits_per_weight() / 8
    }

    pub fn tag(self) -> u8 {
        match self {
            StoredDType::Fp32 => 0,
            StoredDType::Fp16 => 1,
            StoredDType::Q25 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(StoredDType::Fp32),
            1 => Some(StoredDType::Fp16),
            2 => Some(StoredDType::Q25),
            _ => None,
        }
    }
}

impl fmt::Display for StoredDType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StoredDType::Fp32 => "fp32",
            StoredDType::Fp16 => "fp16",
            StoredDType::Q25 => "q2.5",
        })
    }
}

impl FromStr for StoredDType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fp32" | "f32" => Ok(StoredDType::Fp32),
            "fp16" | "f16" => Ok(StoredDType::Fp16),
            "q2.5" | "q25" => Ok(StoredDType::Q25),
            _ => Err(Error::Config(format!("unknown dtype {s:?} (expected fp32|fp16|q2.5)"))),
        }
    }
}

impl TryFrom<String> for StoredDType {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StoredDType> for String {
    fn from(d: StoredDType) -> String {
        d.to_string()
    }
}

/// Encoded weights as raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitBuffer {
    dtype: StoredDType,
    bytes: Vec<u8>,
    count: usize,
}

impl BitBuffer {
    pub fn from_raw(dtype: StoredDType, bytes: Vec<u8>) -> Result<Self> {
        let bpw = dtype.bytes_per_weight();
        if bytes.len() % bpw != 0 {
            return Err(Error::input(format!(
                "{} bytes is not a whole number of {dtype} weights",
                bytes.len()
            )));
        }
        let count = bytes.len() / bpw;
        Ok(BitBuffer { dtype, bytes, count })
    }

    pub fn dtype(&self) -> StoredDType {
        self.dtype
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit_len(&self) -> usize {
        self.bytes.len() * 8
    }

    pub fn bit(&self, index: usize) -> bool {
        self.bytes[index / 8] >> (index % 8) & 1 == 1
    }

    pub fn flip_bit(&mut self, index: usize) {
        self.bytes[index / 8] ^= 1 << (index % 8);
    }

    /// Number of differing bits against another buffer of the same layout.
    pub fn hamming_distance(&self, other: &BitBuffer) -> u64 {
        self.bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as u64)
            .sum()
    }

    /// Container form: tag byte, element count (u64 LE), payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.bytes.len());
        out.push(self.dtype.tag());
        out.extend_from_slice(&(self.count as u64).to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    /// Parses one container record from the front of `input`, returning it and
    /// the number of bytes consumed.
    pub fn read_from(input: &[u8]) -> Result<(BitBuffer, usize)> {
        if input.len() < 9 {
            return Err(Error::format("bit buffer", 0, "truncated header"));
        }
        let dtype = StoredDType::from_tag(input[0])
            .ok_or_else(|| Error::format("bit buffer", 0, format!("unknown dtype tag {}", input[0])))?;
        let count = u64::from_le_bytes(input[1..9].try_into().unwrap()) as usize;
        let len = count
            .checked_mul(dtype.bytes_per_weight())
            .ok_or_else(|| Error::format("bit buffer", 1, "element count overflows"))?;
        let payload = input
            .get(9..9 + len)
            .ok_or_else(|| Error::format("bit buffer", 9, format!("payload needs {len} bytes")))?;
        Ok((
            BitBuffer {
                dtype,
                bytes: payload.to_vec(),
                count,
            },
            9 + len,
        ))
    }
}

/// IEEE 754 binary32 to binary16, round to nearest even, overflow to infinity.
pub fn f32_to_f16_bits(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let man = bits & 0x007f_ffff;

    if exp == 0xff {
        if man == 0 {
            return sign | 0x7c00;
        }
        // quiet NaN, keep the top payload bits
        return sign | 0x7e00 | (man >> 13) as u16;
    }

    let half_exp = exp - 127 + 15;
    if half_exp >= 0x1f {
        return sign | 0x7c00;
    }

    if half_exp <= 0 {
        // subnormal result: value in units of 2^-24 is (1.man) * 2^(exp - 126)
        let shift = (126 - exp) as u32;
        if shift > 24 {
            return sign;
        }
        let full = man | 0x0080_0000;
        let q = full >> shift;
        let rem = full & ((1 << shift) - 1);
        let half = 1 << (shift - 1);
        let round_up = rem > half || (rem == half && q & 1 == 1);
        return sign | (q + round_up as u32) as u16;
    }

    let packed = ((half_exp as u32) << 10) | (man >> 13);
    let rem = man & 0x1fff;
    let round_up = rem > 0x1000 || (rem == 0x1000 && packed & 1 == 1);
    // a mantissa carry rolls into the exponent, and from there into infinity
    sign | (packed + round_up as u32) as u16
}

pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let man = (h & 0x03ff) as u32;
    let bits = match exp {
        0 if man == 0 => sign,
        0 => {
            // normalise the subnormal
            let lead = man.leading_zeros() - 21;
            let man = (man << lead) & 0x03ff;
            let e = 127 - 15 + 1 - lead;
            sign | (e << 23) | (man << 13)
        }
        0x1f => sign | 0x7f80_0000 | (man << 13),
        _ => sign | ((exp + 127 - 15) << 23) | (man << 13),
    };
    f32::from_bits(bits)
}

/// Saturating Q2.5 quantisation (round to nearest, ties to even). NaN stores as 0.
pub fn f32_to_q25(x: f32) -> u8 {
    if x.is_nan() {
        return 0;
    }
    let q = (x * Q25_SCALE).round_ties_even().clamp(-128.0, 127.0);
    (q as i8) as u8
}

pub fn q25_to_f32(b: u8) -> f32 {
    (b as i8) as f32 / Q25_SCALE
}

pub fn encode(w: &Tensor, dtype: StoredDType) -> BitBuffer {
    encode_slice(w.data(), dtype)
}

pub fn encode_slice(w: &[f32], dtype: StoredDType) -> BitBuffer {
    let mut bytes = Vec::with_capacity(w.len() * dtype.bytes_per_weight());
    match dtype {
        StoredDType::Fp32 => w.iter().for_each(|x| bytes.extend_from_slice(&x.to_bits().to_le_bytes())),
        StoredDType::Fp16 => w
            .iter()
            .for_each(|&x| bytes.extend_from_slice(&f32_to_f16_bits(x).to_le_bytes())),
        StoredDType::Q25 => bytes.extend(w.iter().map(|&x| f32_to_q25(x))),
    }
    BitBuffer {
        dtype,
        bytes,
        count: w.len(),
    }
}

/// Decodes to a 1-D tensor of `count` elements.
pub fn decode(b: &BitBuffer) -> Tensor {
    Tensor::from_vec(decode_to_vec(b))
}

pub fn decode_to_vec(b: &BitBuffer) -> Vec<f32> {
    match b.dtype {
        StoredDType::Fp32 => b
            .bytes
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        StoredDType::Fp16 => b
            .bytes
            .chunks_exact(2)
            .map(|c| f16_bits_to_f32(u16::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        StoredDType::Q25 => b.bytes.iter().map(|&v| q25_to_f32(v)).collect(),
    }
}

/// `decode(encode(x))` for a single value.
pub fn quantize(x: f32, dtype: StoredDType) -> f32 {
    match dtype {
        StoredDType::Fp32 => x,
        StoredDType::Fp16 => f16_bits_to_f32(f32_to_f16_bits(x)),
        StoredDType::Q25 => q25_to_f32(f32_to_q25(x)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn enc1(x: f32, dtype: StoredDType) -> Vec<u8> {
        encode(&Tensor::from_vec(vec![x]), dtype).bytes().to_vec()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(enc1(1.0, StoredDType::Fp32), 0x3F80_0000u32.to_le_bytes());
        assert_eq!(enc1(1.0, StoredDType::Fp16), 0x3C00u16.to_le_bytes());
        assert_eq!(enc1(1.0, StoredDType::Q25), [0x20]);
        assert_eq!(enc1(-4.0, StoredDType::Q25), [0x80]);
        assert_eq!(enc1(10.0, StoredDType::Q25), [0x7F]);
        assert_eq!(enc1(-10.0, StoredDType::Q25), [0x80]);
    }

    #[test]
    fn decode_examples() {
        let b = BitBuffer::from_raw(StoredDType::Fp16, 0x3C00u16.to_le_bytes().to_vec()).unwrap();
        assert_eq!(decode(&b).data(), &[1.0]);
        let b = BitBuffer::from_raw(StoredDType::Q25, vec![0x01]).unwrap();
        assert_eq!(decode(&b).data(), &[0.03125]);
        assert_eq!(q25_to_f32(0x7F), Q25_MAX);
    }

    #[test]
    fn fp32_round_trip_is_bitwise_including_non_finite() {
        let specials = [0.0f32, -0.0, f32::INFINITY, f32::NEG_INFINITY, f32::MIN_POSITIVE / 4.0];
        let nan = f32::from_bits(0x7fa0_1234);
        let mut values: Vec<f32> = specials.to_vec();
        values.push(nan);
        values.extend(Rng::new(1).uniform(1000).data().iter().map(|u| (u - 0.5) * 1e6));
        let back = decode(&encode_slice(&values, StoredDType::Fp32));
        for (a, b) in values.iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn fp16_exhaustive_round_trip() {
        for h in 0..=u16::MAX {
            let x = f16_bits_to_f32(h);
            if x.is_nan() {
                assert!(f16_bits_to_f32(f32_to_f16_bits(x)).is_nan());
                continue;
            }
            assert_eq!(f32_to_f16_bits(x), h, "pattern {h:#06x}");
        }
    }

    #[test]
    fn fp16_matches_reference_crate() {
        for h in 0..=u16::MAX {
            let ours = f16_bits_to_f32(h);
            let theirs = half::f16::from_bits(h).to_f32();
            assert!(ours.to_bits() == theirs.to_bits() || (ours.is_nan() && theirs.is_nan()));
        }
        let mut rng = Rng::new(99);
        let mut probe: Vec<f32> = (0..200_000)
            .map(|_| f32::from_bits(rand::RngCore::next_u32(&mut rng)))
            .collect();
        // ties and boundaries
        probe.extend([65504.0, 65519.99, 65520.0, 1.0 + 1.0 / 2048.0, 5.960_464_5e-8, 2.980_232_2e-8, 2.980_233e-8]);
        for x in probe {
            let ours = f32_to_f16_bits(x);
            let theirs = half::f16::from_f32(x).to_bits();
            if x.is_nan() {
                assert!(f16_bits_to_f32(ours).is_nan());
            } else {
                assert_eq!(ours, theirs, "{x:e} ({:#010x})", x.to_bits());
            }
        }
    }

    #[test]
    fn fp16_overflow_and_rounding() {
        assert_eq!(f32_to_f16_bits(1e6), 0x7c00);
        assert_eq!(f32_to_f16_bits(-1e6), 0xfc00);
        assert_eq!(f32_to_f16_bits(65504.0), 0x7bff);
        assert_eq!(f32_to_f16_bits(65520.0), 0x7c00);
        // halfway between 1 and next: ties to even (stays 1.0)
        assert_eq!(f32_to_f16_bits(1.0 + 1.0 / 2048.0), 0x3c00);
        assert_eq!(f32_to_f16_bits(1.0 + 3.0 / 2048.0), 0x3c02);
        // smallest subnormal and half of it
        assert_eq!(f32_to_f16_bits(2f32.powi(-24)), 0x0001);
        assert_eq!(f32_to_f16_bits(2f32.powi(-25)), 0x0000);
        assert!(f16_bits_to_f32(0x7c01).is_nan());
        assert_eq!(f16_bits_to_f32(0xfc00), f32::NEG_INFINITY);
    }

    #[test]
    fn q25_round_trip_error() {
        let mut rng = Rng::new(5);
        let xs: Vec<f32> = (0..10_000).map(|_| rng.range_f32(-4.0, 3.9)).collect();
        let back = decode(&encode_slice(&xs, StoredDType::Q25));
        let max_err = xs
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1.0 / 64.0, "{max_err}");
    }

    #[test]
    fn q25_monotone_over_range() {
        let mut prev = i8::MIN;
        let mut x = Q25_MIN;
        while x <= Q25_MAX {
            let q = f32_to_q25(x) as i8;
            assert!(q >= prev, "{x}");
            assert!((q25_to_f32(q as u8) - x).abs() <= 1.0 / 64.0);
            prev = q;
            x += 1e-3;
        }
    }

    #[test]
    fn container_round_trip_and_truncation() {
        let b = encode_slice(&[1.0, -2.5, 3.25], StoredDType::Fp16);
        let bytes = b.to_bytes();
        assert_eq!(bytes[0], 1);
        let (back, used) = BitBuffer::read_from(&bytes).unwrap();
        assert_eq!((back, used), (b, bytes.len()));
        assert!(BitBuffer::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 9;
        assert_eq!(BitBuffer::read_from(&bad).unwrap_err().category(), "format");
    }

    #[test]
    fn bit_indexing_is_little_endian() {
        let mut b = encode_slice(&[1.0, 1.0], StoredDType::Fp32);
        b.flip_bit(32 + 30);
        let v = decode_to_vec(&b);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], f32::INFINITY);
        assert_eq!(b.hamming_distance(&encode_slice(&[1.0, 1.0], StoredDType::Fp32)), 1);
    }
}
