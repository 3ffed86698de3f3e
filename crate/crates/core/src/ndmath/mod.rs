//! Minimal dense f64 tensor engine with hand-derived gradients.

mod gradcheck;
mod layers;
mod tensor;

#[cfg(test)]
mod tests;

use thiserror::Error;

pub use gradcheck::{grad_check, numeric_gradient, relative_error, DEFAULT_EPS};
pub use layers::{
    dropout, gated_fuse, gelu, gelu_backward, gelu_grad_scalar, gelu_scalar, lora_backward, lora_forward,
    mean_pool_rows, mean_pool_rows_backward, normal_cdf, sigmoid, BatchNorm, BatchNormCache, BatchNormGrads,
    DropoutMask, GateCache, GateGrads, GateUnit, Linear, LinearGrads, LoraAdapter, LoraCache, LoraGrads, Mode,
};
pub use tensor::{dot, Tensor2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NdError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("{len} values cannot fill a {rows}x{cols} tensor")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("batch norm in train mode needs at least 2 rows, got {n}")]
    BatchTooSmall { n: usize },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("LoRA rank {rank} invalid for {in_dim}->{out_dim}")]
    InvalidRank { rank: usize, in_dim: usize, out_dim: usize },
    #[error("LoRA alpha must be positive, got {0}")]
    InvalidAlpha(f64),
}
