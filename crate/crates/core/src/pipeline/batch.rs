use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::budget::BudgetPolicy;
use super::layer::{assemble_layer, choose_rank, factor_stage, finish_stage, smoothing_stage, LayerBundle, LayerOptions};
use super::report::{weight_report, WeightReport};
use crate::error::{Error, Result};
use crate::formats::{dequantize, FormatSpec};
use crate::numerics::Matrix;
use crate::smoothing::remove_smoothing;

/// One quantized weight from [`assemble_batch`].
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub name: String,
    pub bundle: LayerBundle,
    pub report: WeightReport,
}

/// Quantizes many weights in parallel. Output order follows input order and
/// each entry succeeds or fails on its own.
pub fn assemble_batch(weights: &[(String, Matrix)], q1: &FormatSpec, q2: &FormatSpec, policy: &BudgetPolicy, opts: &LayerOptions) -> Vec<(String, Result<BatchItem>)> {
    weights
        .par_iter()
        .map(|(name, w)| {
            let item = assemble_layer(w, q1, q2, policy, opts).and_then(|bundle| {
                let report = weight_report(w, &bundle)?;
                Ok(BatchItem { name: name.clone(), bundle, report })
            });
            (name.clone(), item)
        })
        .collect()
}

/// One cell of the optimize × rotate grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub optimized_lr: bool,
    pub rotations: bool,
    /// `‖W − Ŵ‖_F / ‖W‖_F` in original coordinates.
    pub weight_err_rel: f64,
    pub weight_mse: f64,
}

/// The four toggle combinations for one weight, in the order
/// `(off, off), (off, on), (on, off), (on, on)` as `(optimized, rotated)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub cells: [AblationCell; 4],
}

impl AblationGrid {
    pub fn cell(&self, optimized_lr: bool, rotations: bool) -> &AblationCell {
        &self.cells[usize::from(optimized_lr) * 2 + usize::from(rotations)]
    }

    /// Cell-wise mean over several grids.
    pub fn mean(grids: &[AblationGrid]) -> Result<AblationGrid> {
        let Some(first) = grids.first() else {
            return Err(Error::Parameter("no ablation grids to average".into()));
        };
        let mut cells = first.cells;
        for (k, cell) in cells.iter_mut().enumerate() {
            let count = grids.len() as f64;
            cell.weight_err_rel = grids.iter().map(|g| g.cells[k].weight_err_rel).sum::<f64>() / count;
            cell.weight_mse = grids.iter().map(|g| g.cells[k].weight_mse).sum::<f64>() / count;
        }
        Ok(AblationGrid { cells })
    }
}

/// Runs the optimize × rotate grid on one weight. Smoothing and the two
/// factor stages are computed once and shared between cells.
pub fn ablate(w: &Matrix, q1: &FormatSpec, q2: &FormatSpec, policy: &BudgetPolicy, opts: &LayerOptions) -> Result<AblationGrid> {
    let (rank, _, _) = choose_rank(w.rows(), w.cols(), policy, opts.rank_override)?;
    let smoothed = smoothing_stage(w, opts, q1)?;
    let ws = &smoothed.weight;
    let norm = w.frobenius_norm();
    let combos = [(false, false), (false, true), (true, false), (true, true)];
    let factors: Vec<_> = [false, true]
        .par_iter()
        .map(|&optimized| factor_stage(ws, rank, q1, opts, optimized).map(|(f, _)| f))
        .collect::<Result<_>>()?;
    let cells: Vec<AblationCell> = combos
        .par_iter()
        .map(|&(optimized, rotated)| {
            let (pq, lq, rq, ..) = finish_stage(ws, &factors[usize::from(optimized)], q1, q2, opts, rotated)?;
            let mut what = dequantize(&pq)?;
            what.axpy(1.0, &dequantize(&lq)?.matmul(&dequantize(&rq)?)?)?;
            if let Some(g) = &smoothed.gamma {
                what = remove_smoothing(&what, g)?;
            }
            let diff = what.sub(w)?;
            let err = diff.frobenius_norm();
            Ok(AblationCell {
                optimized_lr: optimized,
                rotations: rotated,
                weight_err_rel: if norm > 0.0 { err / norm } else { err },
                weight_mse: diff.mean_square(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationGrid { cells: cells.try_into().expect("four cells") })
}
