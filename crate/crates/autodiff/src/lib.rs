//! A small reverse-mode automatic differentiation engine over dense `f64`
//! tensors, sized for transformer-style models trained on a CPU.
//!
//! ```
//! use mpcgen_autodiff::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.leaf(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = x.square().sum();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{Tensor, MAX_RANK};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
}
