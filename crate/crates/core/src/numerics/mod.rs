//! Deterministic dense linear algebra, activations, log-space utilities,
//! seeded randomness, and the finite-difference harness that every analytic
//! gradient in the crate is checked against.
//!
//! Everything is double precision. All functions here are pure; the Rng is
//! the only stateful object and it is owned by its caller.

mod gradcheck;
mod matrix;
mod ops;
mod rng;

pub use gradcheck::grad_check;
pub use matrix::{matmul, matmul_transpose_a, matmul_transpose_b, Matrix};
pub use ops::{
    gelu, gelu_grad, log_add, log_sum_exp, normal_cdf, normal_pdf, sigmoid, softmax_backward,
    softmax_row,
};
pub use rng::Rng;
