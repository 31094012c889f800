//! Dense `f64` tensors with a recorded computation graph for reverse-mode
//! gradients, plus finite-difference checking and the Adam optimizer.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{matmul, CustomOp, Gradients, Graph, Var};
pub use optim::Adam;
pub use params::{Bound, ParamStore};
pub use tensor::Tensor;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Standard-normal tensor scaled by `std`.
pub fn randn(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}

/// `x @ w + b` with `b` broadcast over rows.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}
