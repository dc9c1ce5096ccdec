//! Dense tensors with an eager reverse-mode tape.
//!
//! Everything is `f64`. A [`Graph`] records each op as it is evaluated;
//! [`Graph::backward`] walks the records in reverse and returns fresh
//! [`Gradients`]. Accumulating across steps is the caller's job.

mod check;
mod graph;
mod tensor;

pub use check::gradient_check;
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use tensor::{sigmoid, softplus, Tensor};
