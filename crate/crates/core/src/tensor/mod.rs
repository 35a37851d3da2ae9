//! Tensor engine: values, reverse-mode differentiation, neural operations and
//! the ADADELTA optimizer.

mod gradcheck;
mod optim;
mod params;
mod scalar;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use optim::Adadelta;
pub use params::{glorot_uniform, ParamEntry, ParamId, ParamStore};
pub use scalar::{matmul, Scalar};
pub use tape::{Activation, BatchNormRefs, Tape, Var};
pub use tensor::Tensor;
