//! Learned CountSketch matrices and the sketching algorithms they serve.
//!
//! A CountSketch is a sparse `m x n` matrix with one nonzero per column,
//! encoded by a position vector `p` and a value vector `v`. This crate learns
//! both from training data — positions by greedy search, ridge-leverage
//! inner-product bucketing, or heavy-row identification; values by gradient
//! descent on few-shot, subspace-embedding, or empirical low-rank losses —
//! and applies the result to sketched low-rank approximation, the iterative
//! Hessian sketch for constrained least squares, and fast preconditioned
//! regression, with worst-case safety checks alongside.

#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod linalg;
pub mod lra;
pub mod matrix;
pub mod position;
pub mod rng;
pub mod second_order;
pub mod sketch;
pub mod value;

pub use error::{Error, Result};
pub use matrix::Matrix;
