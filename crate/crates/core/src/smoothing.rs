//! Per-channel activation smoothing calibrated on activation statistics.
//!
//! `γ_i = max_j |X_ji|^α / max_j |W_ij|^β`; the layer then uses
//! `X′ = X·diag(γ)⁻¹` and `W′ = diag(γ)·W`, which leaves `X′W′ = XW`
//! unchanged while moving activation outliers into the weights. The migration
//! strengths `(α, β)` are chosen per layer by grid search on output MSE.
//!
//! This is the only data-dependent step; without statistics `γ = 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{fake_quant, FormatSpec};
use crate::numerics::{truncated_svd, Matrix};

/// Column-wise maxima of `|X|` over calibration samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub act_max: Vec<f64>,
    pub sample_count: u64,
}

impl ChannelStats {
    pub fn new(act_max: Vec<f64>, sample_count: u64) -> Result<Self> {
        if act_max.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("channel maxima must be finite and non-negative".into()));
        }
        Ok(Self { act_max, sample_count })
    }

    pub fn channels(&self) -> usize {
        self.act_max.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingResult {
    pub gamma: Vec<f64>,
    pub alpha_mig: f64,
    pub beta_mig: f64,
    /// Output MSE at the selected pair.
    pub search_score: f64,
}

pub fn compute_channel_stats(x: &Matrix) -> ChannelStats {
    let mut act_max = vec![0.0f64; x.cols()];
    for i in 0..x.rows() {
        for (m, v) in act_max.iter_mut().zip(x.row(i)) {
            *m = m.max(v.abs());
        }
    }
    ChannelStats { act_max, sample_count: x.rows() as u64 }
}

/// `γ_i = stats_i^α / (max_j |W_ij|)^β`; channels with a zero statistic on either side get `γ_i = 1`.
pub fn smoothing_vector(stats: &ChannelStats, w: &Matrix, alpha_mig: f64, beta_mig: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha_mig) || !(0.0..=1.0).contains(&beta_mig) {
        return Err(Error::Parameter(format!("migration strengths ({alpha_mig}, {beta_mig}) outside [0, 1]")));
    }
    if stats.channels() != w.rows() {
        return Err(Error::Shape(format!("{} channel statistics for a weight with {} rows", stats.channels(), w.rows())));
    }
    let gamma = stats
        .act_max
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let wmax = w.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if a == 0.0 || wmax == 0.0 {
                return 1.0;
            }
            let g = a.powf(alpha_mig) / wmax.powf(beta_mig);
            if g.is_finite() && g > 0.0 {
                g
            } else {
                1.0
            }
        })
        .collect();
    Ok(gamma)
}

fn check_gamma(gamma: &[f64], len: usize) -> Result<()> {
    if gamma.len() != len {
        return Err(Error::Shape(format!("smoothing vector has {} entries, expected {len}", gamma.len())));
    }
    if gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::Parameter("smoothing factors must be positive and finite".into()));
    }
    Ok(())
}

/// `diag(γ)·W`.
pub fn apply_smoothing(w: &Matrix, gamma: &[f64]) -> Result<Matrix> {
    check_gamma(gamma, w.rows())?;
    Ok(Matrix::from_fn(w.rows(), w.cols(), |i, j| gamma[i] * w[(i, j)]))
}

/// `diag(γ)⁻¹·W`, the inverse of [`apply_smoothing`].
pub fn remove_smoothing(w: &Matrix, gamma: &[f64]) -> Result<Matrix> {
    check_gamma(gamma, w.rows())?;
    Ok(Matrix::from_fn(w.rows(), w.cols(), |i, j| w[(i, j)] / gamma[i]))
}

/// `X·diag(γ)⁻¹`.
pub fn smooth_activations(x: &Matrix, gamma: &[f64]) -> Result<Matrix> {
    check_gamma(gamma, x.cols())?;
    Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] / gamma[j]))
}

/// `{0, 0.1, …, 1}²` in row-major `(α, β)` order.
pub fn default_grid() -> Vec<(f64, f64)> {
    let steps: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    steps.iter().flat_map(|&a| steps.iter().map(move |&b| (a, b))).collect()
}

/// Output MSE of one migration pair.
///
/// The smoothed weight is split into a full-precision rank-`rank` SVD branch
/// and a `q1`-quantized residual. Residual-branch activations are quantized
/// with `q1`; the low-rank branch sees unquantized smoothed activations.
pub fn score_migration(x: &Matrix, w: &Matrix, stats: &ChannelStats, alpha_mig: f64, beta_mig: f64, rank: usize, q1: &FormatSpec) -> Result<(Vec<f64>, f64)> {
    let gamma = smoothing_vector(stats, w, alpha_mig, beta_mig)?;
    let ws = apply_smoothing(w, &gamma)?;
    let xs = smooth_activations(x, &gamma)?;
    let rank = rank.min(w.rows()).min(w.cols());
    let (l0, r0) = truncated_svd(&ws, rank)?;
    let lowrank = l0.matmul(&r0)?;
    let residual = fake_quant(&ws.sub(&lowrank)?, q1);
    let mut y = fake_quant(&xs, q1).matmul(&residual)?;
    y.axpy(1.0, &xs.matmul(&l0)?.matmul(&r0)?)?;
    let reference = x.matmul(w)?;
    Ok((gamma, y.sub(&reference)?.mean_square()))
}

/// Grid search over migration pairs; ties resolve to the earliest grid entry.
pub fn grid_search_migration(x_cal: &Matrix, w: &Matrix, grid: &[(f64, f64)], rank: usize, q1: &FormatSpec) -> Result<SmoothingResult> {
    if grid.is_empty() {
        return Err(Error::Parameter("migration grid is empty".into()));
    }
    if !x_cal.is_finite() {
        return Err(Error::Numeric("calibration activations contain non-finite values".into()));
    }
    if x_cal.cols() != w.rows() {
        return Err(Error::Shape(format!("activations have {} channels, weight has {} rows", x_cal.cols(), w.rows())));
    }
    let stats = compute_channel_stats(x_cal);
    let scored: Vec<(Vec<f64>, f64)> = grid
        .par_iter()
        .map(|&(a, b)| score_migration(x_cal, w, &stats, a, b, rank, q1))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (idx, (_, score)) in scored.iter().enumerate() {
        if *score < scored[best].1 {
            best = idx;
        }
    }
    let (gamma, search_score) = scored.into_iter().nth(best).expect("non-empty");
    Ok(SmoothingResult { gamma, alpha_mig: grid[best].0, beta_mig: grid[best].1, search_score })
}
