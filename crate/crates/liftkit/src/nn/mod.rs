//! Autodiff tensor core and the encoder building blocks.

pub mod gradcheck;
mod layers;
mod tensor;

pub use layers::{
    encoder_block, feed_forward, linear, multi_head_attention, temporal_encoding, xavier_uniform,
    AttentionParams, Dropout, EncoderBlockParams, FeedForwardParams, NormParams,
    LAYER_NORM_EPS,
};
pub use tensor::{Scalar, Tensor};
