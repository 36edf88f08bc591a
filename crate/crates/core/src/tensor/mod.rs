//! Dense tensors, differentiable operations and the gradient tape.

mod gemm;
pub mod gradcheck;
mod ops;
mod rng;
mod scalar;
mod tape;
mod value;

pub use gradcheck::{
    grad_check, grad_check_mixed, grad_check_subset, grad_check_subset_pinned, primitive_suite, relative_error,
    GradCheckReport, OpCheck, Program,
};
pub use ops::Unary;
pub use rng::{RngState, SeededRng, RNG_ALGORITHM};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, NodeId, Tape, Var};
pub use value::Tensor;
