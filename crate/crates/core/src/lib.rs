//! EXPERTNet: a convolutional classifier built from stride-2 downsampling
//! convolutions, four-branch ExFeat blocks fused by an elective layer, and
//! additive skip connections.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient verification); the aliases below fix the element type.

pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = model::Network<f32>;
pub type Network64 = model::Network<f64>;
