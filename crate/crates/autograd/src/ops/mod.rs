//! Differentiable operations. Every function records its backward rule when
//! any input requires grad.

mod conv;
mod elementwise;
mod layout;
mod loss;
mod norm;
mod pool;
mod resize;

pub use conv::{conv2d, conv_transpose2d, ConvGeometry};
pub use elementwise::{add, clamp, leaky_relu, mul, relu, sigmoid, sum};
pub use layout::{concat, expand_width, mean_width, reshape, sum_channels};
pub use loss::{bce, BCE_CLIP};
pub use norm::{batch_norm, RunningStats, BN_EPS, BN_MOMENTUM};
pub use pool::{max_pool2d, spp};
pub use resize::{bilinear_resize, resize_plane};
