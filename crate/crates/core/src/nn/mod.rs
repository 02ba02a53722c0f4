//! Numeric substrate shared by every model: tensors, random streams, layer
//! kernels with hand-written backward passes, Adam, and gradient checking.
//!
//! Everything is `f64`. Functions are pure or mutate only caller-owned values.

mod adam;
mod attention;
mod gradcheck;
pub mod linalg;
mod ops;
mod rng;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{multi_head_attention, multi_head_attention_backward, AttentionCache, AttentionGrads, AttentionParams};
pub use gradcheck::{grad_check, relative_error, Differentiable, GradCheckReport, GRAD_FLOOR};
pub use ops::{
    conv2d_backward, conv2d_forward, cross_entropy, layer_norm, layer_norm_backward, linear_backward, linear_forward, relu,
    relu_backward, softmax, softmax_cross_entropy, ConvGrads, LayerNormCache, LayerNormGrads, LinearGrads, KERNEL,
};
pub use rng::{normal_init, split_seed, RngState};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gradient has {count} non-finite entries; step aborted")]
    NonFiniteGradient { count: usize },
    #[error("d_model {d_model} is not divisible by nhead {nhead}")]
    IndivisibleHeads { d_model: usize, nhead: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}
