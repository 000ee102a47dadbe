//! Numeric substrate: dense `f64` matrices, the activations used by the
//! attention kernels and the transformer, and a reverse-mode gradient tape
//! with a finite-difference checker.
//!
//! Everything downstream computes in 64-bit; the only place values pass
//! through 32-bit is checkpoint storage (see [`crate::model::checkpoint`]).

mod func;
mod matrix;
mod tape;

pub use func::{
    elu_plus_one, elu_plus_one_deriv, elu_plus_one_mat, gelu, gelu_deriv, gelu_mat,
    layer_norm_rows, log_sum_exp, softmax_rows,
};
pub use matrix::Matrix;
pub use tape::{finite_diff_check, GradCheckReport, Gradients, NodeId, Tape, FD_REL_TOL, FD_STEP};
