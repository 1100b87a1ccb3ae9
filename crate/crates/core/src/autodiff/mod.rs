//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations as they are evaluated and borrows the
//! model's [`ParamStore`] read-only, so independent sentences can be
//! evaluated on separate graphs in parallel.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, resolution_floor, GradCheckOptions, GradCheckReport, GroupReport};
pub use graph::{log_sum_exp, sigmoid, softplus, Gradients, Graph, OpKind, Var};
pub use params::{ParamGrads, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
