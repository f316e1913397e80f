//! Sensor-to-caption pipeline over IMU and Wi-Fi CSI signals.
//!
//! The crate is generic over the working precision through [`scalar::Scalar`]
//! (implemented for `f32` and `f64`): training runs single precision,
//! gradient verification double. Concrete aliases are exported at the root.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod datakit;
pub mod encoder;
pub mod generator;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod params;
pub mod pe;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type Graph64 = graph::Graph<f64>;
