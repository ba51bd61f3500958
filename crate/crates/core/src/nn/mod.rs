//! Dense networks with hand-written gradients.

pub mod checkpoint;
pub mod layer;
pub mod loss;
pub mod matrix;
pub mod optim;

mod bottom;
mod top;

pub use bottom::{BottomGrad, BottomModel, BottomTape};
pub use layer::{Activation, Dense, DenseGrad};
pub use loss::{argmax, class_index, evaluate, softmax, LossKind};
pub use matrix::{axpy, dot, hadamard, max_abs_diff, Matrix};
pub use optim::{Optimizer, OptimizerKind};
pub use top::{alpha0_tensors, zero_alpha0_grads, TopGrads, TopModel, TopTape};
