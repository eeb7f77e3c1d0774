//! Sub-band pyramid attention for image denoising.
//!
//! The crate is generic over the element type through [`Scalar`]; the
//! `*64` / `*32` aliases below name the two concrete instantiations.

pub mod attention;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use params::Parameters;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ModelWeights64 = network::ModelWeights<f64>;
pub type ModelWeights32 = network::ModelWeights<f32>;
