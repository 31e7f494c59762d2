//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! The Jacobi sweep orthogonalizes the columns of the working matrix pair by
//! pair; singular values are the final column norms. It needs no external
//! linear-algebra library, is deterministic, and computes small singular
//! values to high relative accuracy, which matters here because the low-rank
//! factors are built directly from the leading part of the spectrum.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Maximum number of full Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 60;

/// Relative pair-orthogonality accepted at convergence.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Thin SVD `A = U · diag(s) · Vᵀ`, singular values sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × k` left singular vectors, `k = min(rows, cols)`.
    pub u: Matrix,
    pub s: Vec<f64>,
    /// `k × cols` right singular vectors (as rows).
    pub vt: Matrix,
    pub sweeps: usize,
}

impl Svd {
    pub fn compute(a: &Matrix) -> Result<Svd> {
        let (rows, cols) = a.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::Parameter("SVD of an empty matrix".into()));
        }
        if rows >= cols {
            let (u, s, vt, sweeps) = jacobi_tall(a)?;
            Ok(finish(u, s, vt, sweeps))
        } else {
            // A = (Aᵀ)ᵀ = (U' S V'ᵀ)ᵀ = V' S U'ᵀ
            let (u_t, s, vt_t, sweeps) = jacobi_tall(&a.transpose())?;
            Ok(finish(vt_t.transpose(), s, u_t.transpose(), sweeps))
        }
    }

    /// Rank-`rank` reconstruction `U_ρ · diag(s_ρ) · V_ρᵀ`.
    pub fn reconstruct(&self, rank: usize) -> Matrix {
        let (l, r) = self.split(rank);
        l.matmul(&r).expect("consistent factor shapes")
    }

    /// `(U_ρ·S_ρ, V_ρᵀ)`: singular values folded into the left factor.
    pub fn split(&self, rank: usize) -> (Matrix, Matrix) {
        let l = Matrix::from_fn(self.u.rows(), rank, |i, j| self.u[(i, j)] * self.s[j]);
        let r = self.vt.rows_range(0, rank);
        (l, r)
    }
}

/// Best rank-`rank` approximation of `a` as factors `(L0, R0)` with `L0·R0 ≈ a`.
///
/// `L0 = U_ρ·S_ρ` (d×ρ) and `R0 = V_ρᵀ` (ρ×n).
pub fn truncated_svd(a: &Matrix, rank: usize) -> Result<(Matrix, Matrix)> {
    let max_rank = a.rows().min(a.cols());
    if rank == 0 || rank > max_rank {
        return Err(Error::Parameter(format!(
            "rank {rank} outside 1..={max_rank} for a {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    Ok(Svd::compute(a)?.split(rank))
}

/// Jacobi on a matrix with `rows >= cols`. Returns `(U, s, Vᵀ, sweeps)` unsorted.
fn jacobi_tall(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix, usize)> {
    let (rows, cols) = a.shape();
    // Columns of A and V stored as rows for contiguous access.
    let mut work = a.transpose();
    let mut v = Matrix::identity(cols);
    let rot_tol = f64::EPSILON * (rows as f64).sqrt();

    let mut sweeps = 0;
    loop {
        if sweeps == MAX_SWEEPS {
            let residual = max_off_diagonal(&work);
            if residual > OFF_DIAGONAL_TOL {
                return Err(Error::Convergence { sweeps, residual });
            }
            break;
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = column_products(&work, p, q);
                if gamma.abs() <= rot_tol * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut work, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut s = Vec::with_capacity(cols);
    let mut u_t = Matrix::zeros(cols, rows);
    for j in 0..cols {
        let col = work.row(j);
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        s.push(norm);
        if norm > 0.0 {
            for (dst, src) in u_t.row_mut(j).iter_mut().zip(col) {
                *dst = src / norm;
            }
        }
    }
    // v holds Vᵀ already (rows are right singular vectors).
    Ok((u_t.transpose(), s, v, sweeps))
}

fn column_products(work: &Matrix, p: usize, q: usize) -> (f64, f64, f64) {
    let (a, b) = (work.row(p), work.row(q));
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (x, y) in a.iter().zip(b) {
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }
    (alpha, beta, gamma)
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

fn max_off_diagonal(work: &Matrix) -> f64 {
    let n = work.rows();
    let mut worst: f64 = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            let (alpha, beta, gamma) = column_products(work, p, q);
            let denom = (alpha * beta).sqrt();
            if denom > 0.0 {
                worst = worst.max(gamma.abs() / denom);
            }
        }
    }
    worst
}

/// Sort descending and fix signs so each left vector's largest-magnitude entry is positive.
fn finish(u: Matrix, s: Vec<f64>, vt: Matrix, sweeps: usize) -> Svd {
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    // Stable sort keeps index order on exact ties.
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));

    let mut u_out = Matrix::zeros(u.rows(), k);
    let mut vt_out = Matrix::zeros(k, vt.cols());
    let mut s_out = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut pivot = 0.0f64;
        for i in 0..u.rows() {
            let v = u[(i, src)];
            if v.abs() > pivot.abs() {
                pivot = v;
            }
        }
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..u.rows() {
            u_out[(i, dst)] = sign * u[(i, src)];
        }
        for j in 0..vt.cols() {
            vt_out[(dst, j)] = sign * vt[(src, j)];
        }
        s_out.push(s[src]);
    }
    Svd { u: u_out, s: s_out, vt: vt_out, sweeps }
}
