//! Dense `f64` tensors with reverse-mode automatic differentiation.

pub mod checkpoint;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{Adam, Optimizer, OptimizerKind};
pub use params::ParamSet;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Affine map `x W + b` for row-major `x`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> crate::Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}
