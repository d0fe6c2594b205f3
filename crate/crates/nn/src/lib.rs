//! Minimal tensor and reverse-mode autodiff engine.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`). Training and
//! gradient checks run at `f64`; bulk inference can use `f32` through
//! [`ParamStore::cast`].

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod layers;
pub mod optim;
mod params;
mod scalar;
mod tensor;

pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{init_normal, init_uniform, ParamId, ParamStore, Parameter};
pub use scalar::{pairwise_sum, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
