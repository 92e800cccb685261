//! Dense-equivalent CNN engine.

pub mod densify;
mod error;
pub mod labels;
pub mod layers;
pub mod netgen;
pub mod nettext;
pub mod network;
pub mod rng;
mod scalar;
pub mod synthdata;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use labels::{LabelMap, IGNORE};
pub use network::{LayerOp, LayerSpec, NetworkSpec, ParamStore};
pub use rng::Rng;
pub use scalar::{dtype_width, Scalar};
pub use tensor::{Dims, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type ParamStore32 = ParamStore<f32>;
