//! Progressive single-image super-resolution as an initial value problem.
//!
//! A low-resolution image is enlarged bicubically to the target size, giving
//! the state `I(t0)`. A small convolutional network `f(I, t)` predicts how
//! detail should change per unit of scale, and a fixed-step RK4 solver
//! integrates it from `t0` down to `1`. Everything numeric is generic over
//! [`Scalar`]; `f32` is used for training and inference, `f64` for gradient
//! checks.

pub mod autodiff;
pub mod error;
pub mod image;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod odesolver;
pub mod resample;
pub mod scalar;
pub mod training;
pub mod vectorfield;

pub use error::{Error, Result};
pub use image::{Dihedral, Image};
pub use scalar::Scalar;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type Params32 = vectorfield::VectorFieldParams<f32>;
pub type Params64 = vectorfield::VectorFieldParams<f64>;
