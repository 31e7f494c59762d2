use serde::{Deserialize, Serialize};

use super::layer::{reconstruct_original, reconstruct_weight, LayerBundle};
use crate::error::{Error, Result};
use crate::formats::{fake_quant, FormatSpec};
use crate::numerics::Matrix;
use crate::smoothing::{apply_smoothing, smooth_activations};

/// Relative slack on the product-error bound, covering rounding in the products.
pub const BOUND_SLACK: f64 = 1e-9;

/// Reconstruction and product errors of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `‖W − Ŵ‖_F` in original coordinates.
    pub weight_err: f64,
    pub weight_err_rel: f64,
    /// `‖X′W′ − Q(X′)Ŵ′‖_F` with `X′ = X·diag(γ)⁻¹`, `W′ = diag(γ)·W`.
    pub matmul_err: f64,
    /// `matmul_err / ‖XW‖_F`.
    pub matmul_err_rel: f64,
    /// `‖X′ − Q(X′)‖·‖W′‖ + ‖Q(X′)‖·‖W′ − Ŵ′‖`.
    pub bound_rhs: f64,
    pub activation_err: f64,
    /// `mean((Ŵ′ − W′)²)`: the residual branch's quantization MSE.
    pub residual_mse: f64,
    /// Q2 quantization MSE of the stored low-rank factors.
    pub lowrank_mse: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Errors of `b` against its source weight `w` on activations `x`.
///
/// Returns a numeric error if the product error ever exceeds the bound.
pub fn error_report(w: &Matrix, x: &Matrix, b: &LayerBundle, act: Option<&FormatSpec>) -> Result<ErrorReport> {
    let (d, n) = b.shape();
    if w.shape() != (d, n) {
        return Err(Error::Shape(format!("weight is {:?}, bundle is {:?}", w.shape(), (d, n))));
    }
    if x.cols() != d {
        return Err(Error::Shape(format!("activations have {} columns, layer expects {d}", x.cols())));
    }
    let (ws, xs) = match &b.gamma {
        Some(g) => (apply_smoothing(w, g)?, smooth_activations(x, g)?),
        None => (w.clone(), x.clone()),
    };
    let what = reconstruct_weight(b)?;
    let xq = act.map_or_else(|| xs.clone(), |f| fake_quant(&xs, f));

    let dx = xs.sub(&xq)?;
    let dw = ws.sub(&what)?;
    // X′W′ − Q(X′)Ŵ′ = (X′ − QX′)W′ + QX′(W′ − Ŵ′), evaluated in this form so
    // rounding scales with the bound's own terms
    let mut diff = dx.matmul(&ws)?;
    diff.axpy(1.0, &xq.matmul(&dw)?)?;
    let matmul_err = diff.frobenius_norm();
    let activation_err = dx.frobenius_norm();
    let bound_rhs = activation_err * ws.frobenius_norm() + xq.frobenius_norm() * dw.frobenius_norm();
    if matmul_err > bound_rhs * (1.0 + BOUND_SLACK) + f64::MIN_POSITIVE {
        return Err(Error::Numeric(format!("product error {matmul_err:e} exceeds its bound {bound_rhs:e}")));
    }

    let weight_err = reconstruct_original(b)?.sub(w)?.frobenius_norm();
    Ok(ErrorReport {
        weight_err,
        weight_err_rel: ratio(weight_err, w.frobenius_norm()),
        matmul_err,
        matmul_err_rel: ratio(matmul_err, x.matmul(w)?.frobenius_norm()),
        bound_rhs,
        activation_err,
        residual_mse: dw.mean_square(),
        lowrank_mse: b.meta.lowrank_mse,
    })
}

/// Weight-only errors, for when no activations are available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub weight_err: f64,
    pub weight_err_rel: f64,
    pub residual_mse: f64,
    pub lowrank_mse: f64,
}

pub fn weight_report(w: &Matrix, b: &LayerBundle) -> Result<WeightReport> {
    if w.shape() != b.shape() {
        return Err(Error::Shape(format!("weight is {:?}, bundle is {:?}", w.shape(), b.shape())));
    }
    let weight_err = reconstruct_original(b)?.sub(w)?.frobenius_norm();
    Ok(WeightReport {
        weight_err,
        weight_err_rel: ratio(weight_err, w.frobenius_norm()),
        residual_mse: b.meta.residual_mse,
        lowrank_mse: b.meta.lowrank_mse,
    })
}
