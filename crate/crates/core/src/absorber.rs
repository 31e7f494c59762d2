//! Low-rank absorption of the residual quantization error.
//!
//! Given a weight `W` and quantizer `Q`, find `L` (d×ρ) and `R` (ρ×n) that
//! minimize `mean((Q(W + LR) − W − LR)²)`. When the objective reaches zero,
//! `W + LR` lies on the quantizer grid and `Q(W + LR) − LR` reproduces `W`
//! exactly: the whole quantization error has been absorbed by a rank-ρ term.
//!
//! Sign convention: the inference branch is `A = −L·R`, so the layer computes
//! `Ŵ = Q(W − A) + A`. Initialization uses `(L, R) = (−L0, R0)` from the
//! truncated SVD of `W`, which starts `W + LR` at the optimal rank-ρ residual.
//!
//! Gradients treat `Q` as locally constant (its derivative is zero almost
//! everywhere): with `E = Q(W + LR) − W − LR`,
//! `∇L = −2/(dn) · E·Rᵀ` and `∇R = −2/(dn) · Lᵀ·E`.

use crate::error::{Error, Result};
use crate::formats::{fake_quant, ElementCodec, FormatSpec, ScaleKind};
use crate::numerics::{truncated_svd, AdamState, Matrix};

/// Factors `(L, R)` of the absorbed perturbation `D = L·R`.
///
/// The additive inference branch is `A = −L·R`; see [`LowRankFactors::branch`].
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    pub l: Matrix,
    pub r: Matrix,
}

impl LowRankFactors {
    pub fn new(l: Matrix, r: Matrix) -> Result<Self> {
        if l.cols() != r.rows() {
            return Err(Error::Shape(format!("L is {:?} but R is {:?}", l.shape(), r.shape())));
        }
        if l.cols() == 0 {
            return Err(Error::Parameter("rank must be at least 1".into()));
        }
        Ok(Self { l, r })
    }

    pub fn rank(&self) -> usize {
        self.l.cols()
    }

    /// `L·R`.
    pub fn product(&self) -> Matrix {
        self.l.matmul(&self.r).expect("rank-consistent factors")
    }

    /// Branch factors `(−L, R)` whose product is the additive branch `A = −L·R`.
    pub fn branch(&self) -> (Matrix, Matrix) {
        (self.l.scale(-1.0), self.r.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub quantizer: FormatSpec,
    /// Recorded for reproducibility; the optimizer itself draws no random numbers.
    pub seed: u64,
    pub keep_best: bool,
}

impl AbsorbConfig {
    pub const DEFAULT_STEPS: usize = 1000;

    /// Defaults for a quantizer: 1000 steps, lr 1e-3 for minifloat element
    /// formats and 1e-4 for integer (and passthrough) formats.
    pub fn for_quantizer(quantizer: FormatSpec) -> Self {
        Self {
            learning_rate: default_absorb_lr(&quantizer),
            steps: Self::DEFAULT_STEPS,
            quantizer,
            seed: 0,
            keep_best: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

pub fn default_absorb_lr(quantizer: &FormatSpec) -> f64 {
    match (quantizer.scale_kind, quantizer.codec) {
        (ScaleKind::E8m0, ElementCodec::MiniFloat { .. }) => 1e-3,
        _ => 1e-4,
    }
}

/// SVD initialization: `(L, R) = (−L0, R0)` so that `W + LR = W − L0·R0`.
pub fn init_factors(w: &Matrix, rank: usize) -> Result<LowRankFactors> {
    let (l0, r0) = truncated_svd(w, rank)?;
    LowRankFactors::new(l0.scale(-1.0), r0)
}

/// `E = Q(W + LR) − W − LR`.
fn absorption_error(w: &Matrix, f: &LowRankFactors, q: &FormatSpec) -> Result<Matrix> {
    let lr = f.l.matmul(&f.r)?;
    let shifted = w.add(&lr)?;
    fake_quant(&shifted, q).sub(&shifted)
}

/// `mean((Q(W + LR) − W − LR)²)`.
pub fn absorption_loss(w: &Matrix, f: &LowRankFactors, q: &FormatSpec) -> Result<f64> {
    Ok(absorption_error(w, f, q)?.mean_square())
}

/// Straight-through gradients of [`absorption_loss`] with respect to `L` and `R`.
pub fn absorption_grads(w: &Matrix, f: &LowRankFactors, q: &FormatSpec) -> Result<(Matrix, Matrix)> {
    let e = absorption_error(w, f, q)?;
    grads_from_error(&e, f)
}

fn grads_from_error(e: &Matrix, f: &LowRankFactors) -> Result<(Matrix, Matrix)> {
    let coeff = -2.0 / e.len() as f64;
    let gl = e.matmul_t(&f.r)?.scale(coeff);
    let gr = f.l.t_matmul(e)?.scale(coeff);
    Ok((gl, gr))
}

/// Result of [`optimize_factors`].
#[derive(Debug, Clone)]
pub struct AbsorbOutcome {
    /// Best iterate when `keep_best`, otherwise the final one.
    pub factors: LowRankFactors,
    /// Loss at every iterate: `trace[0]` is the SVD start, `trace[k]` follows step `k`.
    /// Shorter than `steps + 1` when the loss reached the round-off floor.
    pub trace: Vec<f64>,
    pub best_step: usize,
}

impl AbsorbOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.trace[0]
    }

    pub fn best_loss(&self) -> f64 {
        self.trace[self.best_step]
    }

    pub fn final_loss(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }

    /// Running minimum of the trace.
    pub fn best_trace(&self) -> Vec<f64> {
        running_min(&self.trace)
    }
}

pub(crate) fn running_min(trace: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    trace
        .iter()
        .map(|v| {
            best = best.min(*v);
            best
        })
        .collect()
}

/// Loss below which the residual is indistinguishable from rounding noise in
/// `W + LR`. Adam normalizes step sizes, so descending on such a loss would
/// only move the factors away from an exact solution.
pub fn round_off_floor(w: &Matrix, rank: usize) -> f64 {
    let noise = rank.max(1) as f64 * f64::EPSILON * w.max_abs();
    noise * noise
}

/// SVD initialization followed by up to `cfg.steps` joint Adam updates of
/// `(L, R)`. Stops early once the loss reaches [`round_off_floor`].
pub fn optimize_factors(w: &Matrix, rank: usize, cfg: &AbsorbConfig) -> Result<AbsorbOutcome> {
    cfg.validate()?;
    let start = init_factors(w, rank)?;
    let mut params = [start.l, start.r];
    let mut adam = AdamState::new(&[params[0].shape(), params[1].shape()]);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut best: Option<(usize, f64, [Matrix; 2])> = None;
    let floor = round_off_floor(w, rank);

    for step in 0..=cfg.steps {
        let current = LowRankFactors { l: params[0].clone(), r: params[1].clone() };
        let e = absorption_error(w, &current, &cfg.quantizer)?;
        let loss = e.mean_square();
        if !loss.is_finite() {
            let (best_step, best_loss) = best.as_ref().map_or((0, f64::NAN), |b| (b.0, b.1));
            return Err(Error::Numeric(format!(
                "absorption loss became non-finite at step {step}; last finite loss {:e} at step {}; best {best_loss:e} at step {best_step}",
                trace.last().copied().unwrap_or(f64::NAN),
                step.saturating_sub(1),
            )));
        }
        trace.push(loss);
        if cfg.keep_best && best.as_ref().is_none_or(|b| loss < b.1) {
            best = Some((step, loss, params.clone()));
        }
        if step == cfg.steps || loss <= floor {
            break;
        }
        let (gl, gr) = grads_from_error(&e, &current)?;
        adam.step(&mut params, &[gl, gr], cfg.learning_rate)?;
    }

    let (best_step, factors) = match best {
        Some((step, _, [l, r])) => (step, LowRankFactors { l, r }),
        None => {
            let [l, r] = params;
            (trace.len() - 1, LowRankFactors { l, r })
        }
    };
    Ok(AbsorbOutcome { factors, trace, best_step })
}
