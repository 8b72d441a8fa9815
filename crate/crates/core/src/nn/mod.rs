//! Dense tensors and a small reverse-mode autodiff tape with the layer set
//! the detector needs.

mod real;
mod tape;
mod tensor;

pub use real::Real;
pub use tape::{smooth_l1_value, softmax_xent_value, Gradients, Tape, Var};
pub use tensor::Tensor;
