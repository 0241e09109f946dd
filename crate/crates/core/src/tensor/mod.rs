//! Dense reverse-mode differentiation and optimisation.

mod check;
mod matrix;
mod optim;
mod tape;

pub use check::{gradcheck, gradcheck_many, relative_error, FD_STEP, GRAD_FLOOR};
pub use matrix::Matrix;
pub use optim::{Adam, Binding, ParamId, Params};
pub use tape::{Gradients, Tape, Tensor};

#[cfg(test)]
pub(crate) use tape::softmax_rows;
