//! Dense fp64 matrices, a reverse-mode tape, and the Adam optimizer.
//!
//! Every tensor in the model is two-dimensional; scalars are `1x1`.

mod adam;
pub mod check;
mod matrix;
mod params;
mod tape;

pub use adam::Adam;
pub use matrix::Matrix;
pub use params::{Bound, ParamId, ParamSet};
pub use tape::{gelu, leaky_relu, softmax_rows, Tape, Var, SQRT_EPS};
