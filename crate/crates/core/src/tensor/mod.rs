//! Dense `f64` tensors with a reverse-mode tape.

pub mod gemm;
mod gradcheck;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, relative_error, GradCheckReport};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
