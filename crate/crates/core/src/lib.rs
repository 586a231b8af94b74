//! Experiments on early transferability of adversarial directions between
//! independently trained networks, on a small reverse-mode autodiff engine.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the 64-bit instantiation used by the experiments and the CLI.

pub mod adversarial;
pub mod data;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod models;
pub mod optim;
pub mod report;
pub mod scalar;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = tensor::Tape<f64>;
pub type Network64 = models::Network<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type Direction64 = adversarial::Direction<f64>;
pub type OptimizerState64 = optim::OptimizerState<f64>;
pub type OptimizerConfig64 = optim::OptimizerConfig<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Network32 = models::Network<f32>;
pub type Dataset32 = data::Dataset<f32>;
