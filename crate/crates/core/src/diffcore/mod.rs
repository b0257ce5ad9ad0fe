//! Dense tensors with reverse-mode gradients, the numerical substrate for
//! every loss in the crate.

pub mod checkpoint;
mod gradcheck;
pub mod init;
mod optim;
mod param;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use optim::{Adam, Sgd};
pub use param::{ParamId, ParamStore, Parameter};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};
