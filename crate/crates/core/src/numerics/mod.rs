//! Dense `f64` arrays, a reverse-mode autodiff tape, finite-difference
//! gradient checking and the named-tensor checkpoint format.

mod checkpoint;
mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::ByteReader;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use kernels::{conv2d, matmul};
pub use tape::{dense, BackwardFn, Tape, Var};
pub use tensor::Tensor;
