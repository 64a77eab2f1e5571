//! Condition-number regularization for weight matrices.
//!
//! The penalty `r(S) = ½‖S‖₂² − ½ν⁻¹‖S‖_F²` (with `ν = min(rows, cols)`) is
//! zero exactly on scaled orthogonal matrices and bounds the condition number
//! of `S` from above. This crate provides the penalty, its (sub)gradient, a
//! small dense-network toolkit with manual backprop, MNIST loading, and the
//! experiment runners behind the `condreg` binary.

pub mod data;
pub mod experiments;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod regularizer;

pub use linalg::{kappa, Matrix};
pub use regularizer::{grad_r, reg_value, RegKind};
