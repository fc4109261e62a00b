//! Dense rank-4 tensors with reverse-mode differentiation.

mod adam;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Shape, Tensor};
