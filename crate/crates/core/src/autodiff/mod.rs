//! Dense `f64` tensors with reverse-mode automatic differentiation.

mod gradcheck;
mod graph;
pub mod io;
mod tensor;

pub use gradcheck::{grad_check, grad_check_sampled, relative_error, GradCheckReport};
pub use graph::{set_nan_guard, Graph, Var};
pub use tensor::Tensor;
