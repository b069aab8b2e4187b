//! Training, bit-flip fault injection and Monte Carlo evaluation for small
//! networks whose weights pass through saturated activation functions.

pub mod codec;
pub mod data;
pub mod error;
pub mod harness;
pub mod injector;
pub mod network;
pub mod numerics;
pub mod optim;
pub mod saf;

pub use codec::{BitBuffer, StoredDType};
pub use error::{Error, Result};
pub use injector::FaultConfig;
pub use network::{ArchSpec, LayerSpec, Model};
pub use numerics::{Rng, Tensor};
pub use saf::SafKind;
