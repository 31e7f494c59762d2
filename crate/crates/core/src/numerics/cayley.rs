//! Cayley map from skew-symmetric matrices onto the rotation group.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Skew-symmetry tolerance enforced on every [`SkewParam`].
pub const SKEW_TOL: f64 = 1e-12;

/// A square skew-symmetric matrix `A = −Aᵀ`.
///
/// Every write goes through [`SkewParam::set`], which projects onto the skew
/// subspace, so the invariant holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewParam(Matrix);

impl SkewParam {
    pub fn zeros(n: usize) -> Self {
        SkewParam(Matrix::zeros(n, n))
    }

    /// Validates that `a` is square and skew-symmetric within [`SKEW_TOL`].
    pub fn new(a: Matrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::Shape(format!("skew parameter must be square, got {:?}", a.shape())));
        }
        let asym = a.add(&a.transpose())?.max_abs();
        if asym > SKEW_TOL {
            return Err(Error::Precondition(format!("matrix is not skew-symmetric (|A + Aᵀ| = {asym:e})")));
        }
        Ok(SkewParam(a.skew_part()))
    }

    /// Projects an arbitrary square matrix to its skew part.
    pub fn project(a: &Matrix) -> Self {
        SkewParam(a.skew_part())
    }

    pub fn set(&mut self, a: Matrix) {
        debug_assert_eq!(a.shape(), self.0.shape());
        self.0 = a.skew_part();
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// `Ω = (I − A/2)⁻¹ (I + A/2)`, an orthogonal matrix with determinant +1.
pub fn cayley_retract(a: &SkewParam) -> Result<Matrix> {
    let n = a.dim();
    let half = a.matrix().scale(0.5);
    let lhs = Matrix::identity(n).sub(&half)?;
    let rhs = Matrix::identity(n).add(&half)?;
    solve(&lhs, &rhs)
}

/// Pulls a gradient with respect to `Ω = cayley(A)` back to `A`.
///
/// With `B = I − A/2`, `dΩ = ½ B⁻¹ dA (I + Ω)`, so the gradient is
/// `½ B⁻ᵀ G (I + Ω)ᵀ`. The result is not projected.
pub fn cayley_pullback(a: &SkewParam, omega: &Matrix, grad_omega: &Matrix) -> Result<Matrix> {
    let n = a.dim();
    // Bᵀ = I + A/2 for skew A.
    let bt = Matrix::identity(n).add(&a.matrix().scale(0.5))?;
    let i_plus_omega = Matrix::identity(n).add(omega)?;
    let rhs = grad_omega.matmul_t(&i_plus_omega)?;
    Ok(solve(&bt, &rhs)?.scale(0.5))
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::Shape(format!("cannot solve {:?} against {:?}", a.shape(), b.shape())));
    }
    let m = b.cols();
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| lu[(i, col)].abs().total_cmp(&lu[(j, col)].abs()))
            .expect("non-empty range");
        let pivot = lu[(pivot_row, col)];
        if pivot.abs() <= f64::EPSILON * scale * n as f64 {
            return Err(Error::Numeric(format!("singular system at column {col}")));
        }
        if pivot_row != col {
            swap_rows(&mut lu, pivot_row, col);
            swap_rows(&mut x, pivot_row, col);
        }
        for row in col + 1..n {
            let factor = lu[(row, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                let v = lu[(col, k)];
                lu[(row, k)] -= factor * v;
            }
            for k in 0..m {
                let v = x[(col, k)];
                x[(row, k)] -= factor * v;
            }
        }
    }
    for col in (0..n).rev() {
        let pivot = lu[(col, col)];
        for k in 0..m {
            let mut acc = x[(col, k)];
            for j in col + 1..n {
                acc -= lu[(col, j)] * x[(j, k)];
            }
            x[(col, k)] = acc / pivot;
        }
    }
    Ok(x)
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    for k in 0..cols {
        data.swap(a * cols + k, b * cols + k);
    }
}

/// `‖ΩᵀΩ − I‖_F`.
pub fn orthogonality_defect(omega: &Matrix) -> f64 {
    let n = omega.rows();
    omega
        .t_matmul(omega)
        .and_then(|g| g.sub(&Matrix::identity(n)))
        .map(|d| d.frobenius_norm())
        .unwrap_or(f64::INFINITY)
}

/// Determinant via the same elimination as [`solve`].
pub fn determinant(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut lu = a.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| lu[(i, col)].abs().total_cmp(&lu[(j, col)].abs()))
            .expect("non-empty range");
        if lu[(pivot_row, col)] == 0.0 {
            return 0.0;
        }
        if pivot_row != col {
            swap_rows(&mut lu, pivot_row, col);
            det = -det;
        }
        let pivot = lu[(col, col)];
        det *= pivot;
        for row in col + 1..n {
            let factor = lu[(row, col)] / pivot;
            for k in col..n {
                let v = lu[(col, k)];
                lu[(row, k)] -= factor * v;
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skew_from_seed(n: usize, seed: u64) -> SkewParam {
        let mut s = seed;
        let raw = Matrix::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        });
        SkewParam::project(&raw)
    }

    #[test]
    fn zero_maps_to_identity() {
        assert_eq!(cayley_retract(&SkewParam::zeros(5)).unwrap(), Matrix::identity(5));
    }

    #[test]
    fn two_by_two_closed_form() {
        let theta: f64 = 0.2;
        let a = SkewParam::new(Matrix::from_rows(&[vec![0.0, theta], vec![-theta, 0.0]]).unwrap()).unwrap();
        let omega = cayley_retract(&a).unwrap();
        let phi = 2.0 * (theta / 2.0).atan();
        // (I − A/2)⁻¹(I + A/2) with A = [[0, θ], [−θ, 0]] is [[cos φ, sin φ], [−sin φ, cos φ]].
        let expect = Matrix::from_rows(&[vec![phi.cos(), phi.sin()], vec![-phi.sin(), phi.cos()]]).unwrap();
        assert!(omega.sub(&expect).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn random_skew_is_orthogonal_with_unit_determinant() {
        for seed in 0..5 {
            let a = skew_from_seed(8, seed);
            let omega = cayley_retract(&a).unwrap();
            assert!(orthogonality_defect(&omega) < 1e-10);
            assert!((determinant(&omega) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn skew_param_rejects_symmetric() {
        let sym = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(SkewParam::new(sym), Err(Error::Precondition(_))));
        assert!(matches!(SkewParam::new(Matrix::zeros(2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn solve_matches_product() {
        let a = Matrix::from_rows(&[vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5], vec![-3.0, 4.0]]).unwrap();
        let b = a.matmul(&x).unwrap();
        assert!(solve(&a, &b).unwrap().sub(&x).unwrap().max_abs() < 1e-13);
        assert!(matches!(solve(&Matrix::zeros(2, 2), &Matrix::identity(2)), Err(Error::Numeric(_))));
    }
}
