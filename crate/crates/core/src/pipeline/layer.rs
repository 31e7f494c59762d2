use serde::{Deserialize, Serialize};

use super::budget::{rank_for_budget, BudgetPolicy, BudgetReport};
use crate::absorber::{init_factors, optimize_factors, AbsorbConfig, LowRankFactors};
use crate::error::{Error, Result};
use crate::formats::{dequantize, fake_quant, quantize_blockwise, FormatSpec, QuantizedTensor};
use crate::numerics::Matrix;
use crate::rotation::{fuse_rotation, optimize_rotation, rotation_loss, RotationConfig};
use crate::smoothing::{apply_smoothing, grid_search_migration, remove_smoothing, smoothing_vector, ChannelStats};

/// Source of the per-channel smoothing vector.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothingInput {
    /// Calibration activations (`samples × d`); `(α, β)` chosen by grid search.
    Calibrate { activations: Matrix, grid: Vec<(f64, f64)> },
    /// Precomputed channel maxima with fixed migration strengths.
    Fixed { stats: ChannelStats, alpha_mig: f64, beta_mig: f64 },
}

pub const DEFAULT_SMOOTHING_RANK: usize = 32;

/// Per-layer options. `None` fields fall back to the per-format defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOptions {
    pub optimized_lr: bool,
    pub rotations: bool,
    /// Replaces the budget-derived rank.
    pub rank_override: Option<usize>,
    pub smoothing: Option<SmoothingInput>,
    /// SVD rank used to score smoothing candidates; defaults to
    /// [`DEFAULT_SMOOTHING_RANK`].
    pub smoothing_rank: Option<usize>,
    pub absorb_steps: Option<usize>,
    pub absorb_lr: Option<f64>,
    pub rotation_steps: Option<usize>,
    pub rotation_lr: Option<f64>,
    pub seed: u64,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self {
            optimized_lr: true,
            rotations: true,
            rank_override: None,
            smoothing: None,
            smoothing_rank: None,
            absorb_steps: None,
            absorb_lr: None,
            rotation_steps: None,
            rotation_lr: None,
            seed: 0,
        }
    }
}

impl LayerOptions {
    /// Plain SVD branch, no optimization, no rotation.
    pub fn baseline() -> Self {
        Self { optimized_lr: false, rotations: false, ..Self::default() }
    }

    pub fn effective_smoothing_rank(&self) -> usize {
        self.smoothing_rank.unwrap_or(DEFAULT_SMOOTHING_RANK)
    }

    pub fn absorb_config(&self, q1: &FormatSpec) -> AbsorbConfig {
        let mut cfg = AbsorbConfig::for_quantizer(q1.clone());
        if let Some(s) = self.absorb_steps {
            cfg.steps = s;
        }
        if let Some(lr) = self.absorb_lr {
            cfg.learning_rate = lr;
        }
        cfg.seed = self.seed;
        cfg
    }

    pub fn rotation_config(&self, q2: &FormatSpec) -> RotationConfig {
        let mut cfg = RotationConfig::for_quantizer(q2.clone());
        if let Some(s) = self.rotation_steps {
            cfg.steps = s;
        }
        if let Some(lr) = self.rotation_lr {
            cfg.learning_rate = lr;
        }
        cfg.seed = self.seed;
        cfg
    }
}

/// Summary of one optimization stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub steps: usize,
    pub learning_rate: f64,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub best_step: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingMeta {
    pub alpha_mig: f64,
    pub beta_mig: f64,
    pub rank: usize,
    /// Output MSE of the selected pair when chosen by grid search.
    pub search_score: Option<f64>,
    pub grid_size: usize,
}

/// Everything needed to interpret and reproduce a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMeta {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Rank before capping at `min(rows, cols)`.
    pub requested_rank: usize,
    pub rank_override: Option<usize>,
    pub policy: BudgetPolicy,
    pub q1: FormatSpec,
    pub q2: FormatSpec,
    pub optimized_lr: bool,
    pub rotations: bool,
    pub seed: u64,
    pub absorb: Option<StageMeta>,
    pub rotation: Option<StageMeta>,
    pub smoothing: Option<SmoothingMeta>,
    /// `mean((Q1(P) − P)²)`, equal to `‖Ŵ − W‖²/(dn)` in smoothed coordinates.
    pub residual_mse: f64,
    /// Q2 quantization MSE of the two stored factors (summed).
    pub lowrank_mse: f64,
    pub warnings: Vec<String>,
}

/// A quantized layer: `Ŵ = Q1(P) + Q2(L)·Q2(R)` in smoothed coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBundle {
    pub residual: QuantizedTensor,
    pub lowrank_l: QuantizedTensor,
    pub lowrank_r: QuantizedTensor,
    /// `None` means no smoothing (`γ = 1`).
    pub gamma: Option<Vec<f64>>,
    pub meta: LayerMeta,
}

impl LayerBundle {
    pub fn shape(&self) -> (usize, usize) {
        self.residual.shape()
    }

    pub fn rank(&self) -> usize {
        self.lowrank_l.cols()
    }

    /// Checks the three tensors against each other and against the manifest.
    pub fn validate(&self) -> Result<()> {
        let (d, n) = self.residual.shape();
        let rank = self.lowrank_l.cols();
        if self.lowrank_l.rows() != d || self.lowrank_r.shape() != (rank, n) {
            return Err(Error::Format(format!(
                "branch shapes {:?}·{:?} do not match residual {:?}",
                self.lowrank_l.shape(),
                self.lowrank_r.shape(),
                (d, n)
            )));
        }
        let m = &self.meta;
        if (m.rows, m.cols, m.rank) != (d, n, rank) {
            return Err(Error::Format("manifest shape or rank disagrees with tensors".into()));
        }
        if self.residual.format() != &m.q1 || self.lowrank_l.format() != &m.q2 || self.lowrank_r.format() != &m.q2 {
            return Err(Error::Format("manifest formats disagree with tensors".into()));
        }
        if let Some(g) = &self.gamma {
            if g.len() != d || g.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Format("smoothing vector is malformed".into()));
            }
        }
        Ok(())
    }

    /// `Q2(L)·Q2(R)`.
    pub fn lowrank_product(&self) -> Result<Matrix> {
        dequantize(&self.lowrank_l)?.matmul(&dequantize(&self.lowrank_r)?)
    }

    pub fn budget_report(&self) -> BudgetReport {
        let (d, n) = self.shape();
        let budget = self.meta.rank_override.is_none().then_some(self.meta.policy.budget_bits_per_channel);
        BudgetReport::new(d, n, self.rank(), &self.meta.q2, budget)
    }
}

/// Output of the rank stage: the effective rank plus warnings.
pub(crate) fn choose_rank(rows: usize, cols: usize, policy: &BudgetPolicy, rank_override: Option<usize>) -> Result<(usize, usize, Vec<String>)> {
    let requested = match rank_override {
        Some(0) => return Err(Error::Budget("rank override must be at least 1".into())),
        Some(r) => r,
        None => rank_for_budget(policy)?,
    };
    let cap = rows.min(cols);
    let mut warnings = Vec::new();
    let rank = if requested > cap {
        warnings.push(format!("rank {requested} capped at {cap} for a {rows}x{cols} weight"));
        cap
    } else {
        requested
    };
    Ok((rank, requested, warnings))
}

/// Smoothed weight plus the vector that produced it.
pub(crate) struct Smoothed {
    pub weight: Matrix,
    pub gamma: Option<Vec<f64>>,
    pub meta: Option<SmoothingMeta>,
}

pub(crate) fn smoothing_stage(w: &Matrix, opts: &LayerOptions, q1: &FormatSpec) -> Result<Smoothed> {
    let rank = opts.effective_smoothing_rank();
    if rank == 0 {
        return Err(Error::Parameter("smoothing rank must be at least 1".into()));
    }
    let input = opts.smoothing.as_ref();
    let Some(input) = input else {
        return Ok(Smoothed { weight: w.clone(), gamma: None, meta: None });
    };
    let (gamma, meta) = match input {
        SmoothingInput::Calibrate { activations, grid } => {
            let res = grid_search_migration(activations, w, grid, rank, q1)?;
            let meta = SmoothingMeta {
                alpha_mig: res.alpha_mig,
                beta_mig: res.beta_mig,
                rank,
                search_score: Some(res.search_score),
                grid_size: grid.len(),
            };
            (res.gamma, meta)
        }
        SmoothingInput::Fixed { stats, alpha_mig, beta_mig } => {
            let gamma = smoothing_vector(stats, w, *alpha_mig, *beta_mig)?;
            (gamma, SmoothingMeta { alpha_mig: *alpha_mig, beta_mig: *beta_mig, rank, search_score: None, grid_size: 0 })
        }
    };
    Ok(Smoothed { weight: apply_smoothing(w, &gamma)?, gamma: Some(gamma), meta: Some(meta) })
}

/// Factors before rotation, in the absorber's sign convention.
pub(crate) fn factor_stage(ws: &Matrix, rank: usize, q1: &FormatSpec, opts: &LayerOptions, optimized: bool) -> Result<(LowRankFactors, Option<StageMeta>)> {
    if !optimized {
        return Ok((init_factors(ws, rank)?, None));
    }
    let cfg = opts.absorb_config(q1);
    let out = optimize_factors(ws, rank, &cfg)?;
    let meta = StageMeta {
        steps: cfg.steps,
        learning_rate: cfg.learning_rate,
        initial_loss: out.initial_loss(),
        best_loss: out.best_loss(),
        best_step: out.best_step,
        final_loss: out.final_loss(),
    };
    Ok((out.factors, Some(meta)))
}

/// Rotation, dual quantization and residual recomputation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish_stage(
    ws: &Matrix,
    factors: &LowRankFactors,
    q1: &FormatSpec,
    q2: &FormatSpec,
    opts: &LayerOptions,
    rotations: bool,
) -> Result<(QuantizedTensor, QuantizedTensor, QuantizedTensor, Option<StageMeta>, f64, f64)> {
    let (lb, rb) = factors.branch();
    let (lf, rf, rot_meta) = if rotations {
        let cfg = opts.rotation_config(q2);
        let out = optimize_rotation(&lb, &rb, &cfg)?;
        let (lf, rf) = fuse_rotation(&lb, &rb, &out.omega)?;
        let meta = StageMeta {
            steps: cfg.steps,
            learning_rate: cfg.learning_rate,
            initial_loss: out.identity_loss(),
            best_loss: out.best_loss(),
            best_step: out.best_step,
            final_loss: *out.trace.last().expect("non-empty trace"),
        };
        (lf, rf, Some(meta))
    } else {
        (lb, rb, None)
    };
    let lowrank_mse = rotation_loss(&lf, &rf, &Matrix::identity(lf.cols()), q2)?;
    let lq = quantize_blockwise(&lf, q2);
    let rq = quantize_blockwise(&rf, q2);
    let aq = dequantize(&lq)?.matmul(&dequantize(&rq)?)?;
    let p = ws.sub(&aq)?;
    let pq = quantize_blockwise(&p, q1);
    let residual_mse = dequantize(&pq)?.sub(&p)?.mean_square();
    Ok((pq, lq, rq, rot_meta, residual_mse, lowrank_mse))
}

/// Quantizes one weight into a residual branch under `q1` and a low-rank
/// branch under `q2`.
///
/// Stages: optional smoothing, SVD initialization, optional absorption
/// against `q1`, optional rotation against `q2`, then `P = W − Q2(L)Q2(R)`
/// quantized with `q1`. Deterministic for fixed inputs.
pub fn assemble_layer(w: &Matrix, q1: &FormatSpec, q2: &FormatSpec, policy: &BudgetPolicy, opts: &LayerOptions) -> Result<LayerBundle> {
    if !w.is_finite() {
        return Err(Error::Numeric("weight contains non-finite values".into()));
    }
    let (rank, requested, warnings) = choose_rank(w.rows(), w.cols(), policy, opts.rank_override)?;
    let smoothed = smoothing_stage(w, opts, q1)?;
    let (factors, absorb) = factor_stage(&smoothed.weight, rank, q1, opts, opts.optimized_lr)?;
    let (residual, lowrank_l, lowrank_r, rotation, residual_mse, lowrank_mse) =
        finish_stage(&smoothed.weight, &factors, q1, q2, opts, opts.rotations)?;
    let meta = LayerMeta {
        rows: w.rows(),
        cols: w.cols(),
        rank,
        requested_rank: requested,
        rank_override: opts.rank_override,
        policy: *policy,
        q1: q1.clone(),
        q2: q2.clone(),
        optimized_lr: opts.optimized_lr,
        rotations: opts.rotations,
        seed: opts.seed,
        absorb,
        rotation,
        smoothing: smoothed.meta,
        residual_mse,
        lowrank_mse,
        warnings,
    };
    Ok(LayerBundle { residual, lowrank_l, lowrank_r, gamma: smoothed.gamma, meta })
}

/// `Ŵ = Q1(P) + Q2(L)·Q2(R)` in the bundle's (smoothed) coordinates.
pub fn reconstruct_weight(b: &LayerBundle) -> Result<Matrix> {
    b.validate()?;
    dequantize(&b.residual)?.add(&b.lowrank_product()?)
}

/// `diag(γ)⁻¹·Ŵ`, comparable with the original weight.
pub fn reconstruct_original(b: &LayerBundle) -> Result<Matrix> {
    let w = reconstruct_weight(b)?;
    match &b.gamma {
        Some(g) => remove_smoothing(&w, g),
        None => Ok(w),
    }
}

/// Quantized layer output.
///
/// `X′ = X·diag(γ)⁻¹`; the residual branch sees `act(X′)` and the low-rank
/// branch `lr_act(X′)`. `lr_act` defaults to `act`; `None` for both keeps
/// activations in full precision.
pub fn forward(b: &LayerBundle, x: &Matrix, act: Option<&FormatSpec>, lr_act: Option<&FormatSpec>) -> Result<Matrix> {
    b.validate()?;
    let (d, _) = b.shape();
    if x.cols() != d {
        return Err(Error::Shape(format!("activations have {} columns, layer expects {d}", x.cols())));
    }
    let xs = match &b.gamma {
        Some(g) => crate::smoothing::smooth_activations(x, g)?,
        None => x.clone(),
    };
    let quant = |f: Option<&FormatSpec>| f.map_or_else(|| xs.clone(), |f| fake_quant(&xs, f));
    let x_res = quant(act);
    let x_lr = quant(lr_act.or(act));
    let mut y = x_res.matmul(&dequantize(&b.residual)?)?;
    y.axpy(1.0, &x_lr.matmul(&dequantize(&b.lowrank_l)?)?.matmul(&dequantize(&b.lowrank_r)?)?)?;
    Ok(y)
}

/// Round-to-nearest weight quantization with no low-rank branch.
pub fn rtn_weight(w: &Matrix, q1: &FormatSpec) -> Matrix {
    fake_quant(w, q1)
}

/// `‖XW − act(X)·Q1(W)‖_F` for the round-to-nearest baseline.
pub fn rtn_matmul_error(w: &Matrix, x: &Matrix, q1: &FormatSpec, act: Option<&FormatSpec>) -> Result<f64> {
    let xq = act.map_or_else(|| x.clone(), |f| fake_quant(x, f));
    Ok(x.matmul(w)?.sub(&xq.matmul(&rtn_weight(w, q1))?)?.frobenius_norm())
}
