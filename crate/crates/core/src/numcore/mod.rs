//! Dense row-major kernels with hand-written gradients.
//!
//! Everything is `f64`: the second-order checks downstream compare against
//! central differences at 1e-6 relative, which single precision cannot reach.

mod gradcheck;
mod loss;
mod matrix;
mod rng;

pub use gradcheck::{central_difference, grad_check, relative_error};
pub use loss::{cross_entropy, log_clamped, softmax, softmax_row, softmax_vjp_row, CrossEntropy, LOG_FLOOR};
pub use matrix::Matrix;
pub use rng::{Rng, Stream};
