//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Leaves are created with
//! [`Graph::param`] (tracked) or [`Graph::constant`]; every operation on a
//! [`Var`] appends one node to the tape. [`Graph::backward`] walks the tape
//! in reverse and accumulates gradients into every tracked node.

mod gradcheck;
mod graph;
mod rng;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport, DEFAULT_STEP};
pub use graph::{reparameterize, Graph, Var};
pub use rng::RngState;
pub use tensor::Tensor;
