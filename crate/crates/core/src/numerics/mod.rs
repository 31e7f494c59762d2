//! Dense linear algebra: matrices, Jacobi SVD, Adam, the Cayley map and a
//! finite-difference gradient checker.

mod adam;
mod cayley;
mod gradcheck;
mod matrix;
mod svd;

pub use adam::{adam_step, AdamState};
pub use cayley::{cayley_pullback, cayley_retract, determinant, orthogonality_defect, solve, SkewParam, SKEW_TOL};
pub use gradcheck::{finite_diff_grad, relative_error};
pub use matrix::{frobenius_norm, Matrix};
pub use svd::{truncated_svd, Svd, MAX_SWEEPS, OFF_DIAGONAL_TOL};

/// `A · B` as a free function.
pub fn matmul(a: &Matrix, b: &Matrix) -> crate::Result<Matrix> {
    a.matmul(b)
}
