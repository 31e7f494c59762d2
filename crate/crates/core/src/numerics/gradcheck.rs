use crate::numerics::Matrix;

/// Central-difference gradient of a scalar function of a matrix.
///
/// Each entry is `(f(X + eps·E_ij) − f(X − eps·E_ij)) / (2·eps)`.
pub fn finite_diff_grad(f: impl Fn(&Matrix) -> f64, x: &Matrix, eps: f64) -> Matrix {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for idx in 0..x.len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + eps;
        let up = f(&probe);
        probe.as_mut_slice()[idx] = orig - eps;
        let down = f(&probe);
        probe.as_mut_slice()[idx] = orig;
        grad.as_mut_slice()[idx] = (up - down) / (2.0 * eps);
    }
    grad
}

/// `‖a − b‖_F / max(‖b‖_F, floor)`.
pub fn relative_error(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    let diff = a.sub(b).expect("matching shapes").frobenius_norm();
    diff / b.frobenius_norm().max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm_gradient_is_two_x() {
        let x = Matrix::from_fn(3, 4, |i, j| i as f64 - 0.7 * j as f64 + 0.1);
        let g = finite_diff_grad(|m| m.sum_squares(), &x, 1e-4);
        assert!(relative_error(&g, &x.scale(2.0), 1e-300) < 1e-9);
    }

    #[test]
    fn trace_gradient_is_identity() {
        let x = Matrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
        let g = finite_diff_grad(|m| m.trace(), &x, 1e-3);
        assert!(g.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn entry_sum_gradient_is_all_ones() {
        let x = Matrix::from_fn(2, 5, |i, j| (i * j) as f64 - 1.5);
        let g = finite_diff_grad(|m| m.as_slice().iter().sum(), &x, 1e-3);
        assert!(g.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-10));
    }
}
