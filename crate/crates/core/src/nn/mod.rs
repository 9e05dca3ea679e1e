//! Dense tensors and the hand-differentiated layers the U-Net is built from.

mod adam;
pub mod gradcheck;
mod layers;
mod loss;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, max_relative_error, numerical_gradient};
pub use layers::{
    conv2d, conv2d_backward, maxpool2d, maxpool2d_backward, pointwise_conv, pointwise_conv_backward, relu,
    relu_backward, softmax2, softmax2_backward, transposed_conv2d, transposed_conv2d_backward, ConvGrads,
    PoolIndices,
};
pub use loss::{weighted_loss, weighted_loss_backward, LossConfig, LossMode, LOG_EPS};
pub use tensor::{gemm, Real, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("max pooling needs even spatial dimensions, got {height}x{width}")]
    OddSpatialDims { height: usize, width: usize },
    #[error("expected 2 channels, got {0}")]
    ChannelCount(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
