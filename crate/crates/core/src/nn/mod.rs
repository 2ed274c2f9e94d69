//! Minimal dense-tensor machinery: NHWC tensors, the handful of layers the
//! segmentor and discriminator need (each with an explicit backward pass),
//! named parameter storage and the Adam optimizer.

mod adam;
mod layers;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{
    bilinear_resize, bilinear_resize_backward, conv2d_backward, conv2d_forward,
    global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward, sigmoid,
    softmax_channels, softmax_channels_backward, ConvSpec, LEAKY_SLOPE,
};
pub use params::{Grads, Param, ParamSet};
pub use tensor::Tensor4;
