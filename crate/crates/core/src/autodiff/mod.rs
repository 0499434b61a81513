//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] in execution order; [`Tape::backward`]
//! walks the record in reverse and returns a [`Gradients`] table. Parameters
//! live outside the tape as [`Tensor`]s and receive their gradients through
//! [`Gradients::accumulate_into`]. A fresh tape is built for every step.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
