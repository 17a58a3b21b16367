//! Numeric kernels with explicit backward passes.

pub mod conv;
pub mod elementwise;
pub mod pool;

pub use conv::{
    conv2d, conv2d_backward, depthwise_conv, depthwise_conv_backward, pointwise_conv, pointwise_conv_backward,
    ConvGrads, ConvSpec,
};
pub use elementwise::{
    affine_channel_norm, affine_channel_norm_backward, concat_channels, elementwise, elementwise_backward, gate_spatial,
    gate_spatial_backward, gelu, gelu_backward, group_softmax, group_softmax_backward, scale_by_channel,
    scale_channels, scale_channels_backward, sigmoid, sigmoid_backward, split_channels, BinaryOp, NormGrads,
};
pub use pool::{channel_pool, channel_pool_backward, global_avg_pool, global_avg_pool_backward, PoolMode};
