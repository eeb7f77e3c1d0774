//! Neural network primitives with hand-written backward passes.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseParams};
pub use pool::{
    concat_channels, concat_channels_all, global_average_pool, global_average_pool_backward,
    split_channels,
};

/// Uniform bound `sqrt(1 / fan_in)` used for weight initialization.
pub(crate) fn init_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}
