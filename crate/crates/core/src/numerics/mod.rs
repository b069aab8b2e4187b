//! Dense FP32 tensors and the seeded random streams everything else draws from.

mod rng;
mod tensor;

pub use rng::{Rng, StreamDomain};
pub use tensor::{matmul, Tensor};

pub(crate) use tensor::{gemm_acc, gemm_at_b_acc, gemm_a_bt_acc};
