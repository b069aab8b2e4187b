//! Saturated activation functions applied to weights.
//!
//! Every kind except [`SafKind::None`] is odd, monotone and bounded. The
//! network keeps raw weights and evaluates `tau(w)` on the fly, so a
//! corrupted raw value can never push an effective weight past the bound.

use std::f32::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_TANH_SCALE: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SafKind {
    None,
    Tanh,
    /// `tanh(c * x)` with `c > 0`.
    TanhC(f32),
    Softsign,
    Arctan,
}

impl SafKind {
    pub const PAPER_SET: [SafKind; 5] = [
        SafKind::None,
        SafKind::Tanh,
        SafKind::TanhC(DEFAULT_TANH_SCALE),
        SafKind::Softsign,
        SafKind::Arctan,
    ];

    pub fn tanh_c(c: f32) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("tanh scale must be positive, got {c}")));
        }
        Ok(SafKind::TanhC(c))
    }

    /// Saturation bound, `None` for the identity.
    pub fn bound(self) -> Option<f32> {
        match self {
            SafKind::None => None,
            SafKind::Tanh | SafKind::TanhC(_) | SafKind::Softsign => Some(1.0),
            SafKind::Arctan => Some(FRAC_PI_2),
        }
    }

    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            SafKind::None => x,
            SafKind::Tanh => x.tanh(),
            SafKind::TanhC(c) => (c * x).tanh(),
            SafKind::Softsign => {
                if x.is_infinite() {
                    x.signum()
                } else {
                    x / (1.0 + x.abs())
                }
            }
            SafKind::Arctan => x.atan(),
        }
    }

    /// `d tau / dx`
    #[inline]
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            SafKind::None => 1.0,
            SafKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            SafKind::TanhC(c) => {
                let t = (c * x).tanh();
                c * (1.0 - t * t)
            }
            SafKind::Softsign => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
            SafKind::Arctan => 1.0 / (1.0 + x * x),
        }
    }

    pub fn is_identity(self) -> bool {
        self == SafKind::None
    }
}

impl Default for SafKind {
    fn default() -> Self {
        SafKind::None
    }
}

impl fmt::Display for SafKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafKind::None => f.write_str("none"),
            SafKind::Tanh => f.write_str("tanh"),
            SafKind::TanhC(c) if *c == DEFAULT_TANH_SCALE => f.write_str("tanh0.5"),
            SafKind::TanhC(c) => write!(f, "tanhC:{c}"),
            SafKind::Softsign => f.write_str("softsign"),
            SafKind::Arctan => f.write_str("arctan"),
        }
    }
}

impl FromStr for SafKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "none" => Ok(SafKind::None),
            "tanh" => Ok(SafKind::Tanh),
            "tanh0.5" => Ok(SafKind::TanhC(DEFAULT_TANH_SCALE)),
            "softsign" => Ok(SafKind::Softsign),
            "arctan" => Ok(SafKind::Arctan),
            other => match other.strip_prefix("tanhc:") {
                Some(c) => {
                    let c: f32 = c
                        .parse()
                        .map_err(|_| Error::Config(format!("bad tanh scale in {s:?}")))?;
                    SafKind::tanh_c(c)
                }
                None => Err(Error::Config(format!(
                    "unknown SAF {s:?} (expected none|tanh|tanh0.5|softsign|arctan|tanhC:<c>)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for SafKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SafKind> for String {
    fn from(k: SafKind) -> String {
        k.to_string()
    }
}

/// Elementwise `tau(w)`. Total: infinities saturate, NaN stays NaN.
pub fn saf_forward(kind: SafKind, w: &Tensor) -> Tensor {
    if kind.is_identity() {
        return w.clone();
    }
    w.map(|x| kind.apply(x))
}

/// Elementwise `upstream * tau'(w)`.
pub fn saf_backward(kind: SafKind, w: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if w.shape() != upstream.shape() {
        return Err(Error::dim(format!(
            "saf_backward: weight {:?} vs upstream {:?}",
            w.shape(),
            upstream.shape()
        )));
    }
    let data = w
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| g * kind.derivative(x))
        .collect();
    Tensor::new(w.shape().to_vec(), data)
}
