//! Dense tensors, a define-by-run gradient tape, and a central-difference
//! gradient checker.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, numeric_gradient};
pub(crate) use tape::softmax_in_place;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("invalid shape {shape:?}: dimensions must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("conv2d: {kernel}x{kernel} kernel larger than {height}x{width} input padded by {padding}")]
    KernelTooLarge { kernel: usize, height: usize, width: usize, padding: usize },
    #[error("conv2d: stride must be positive")]
    InvalidStride,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}
