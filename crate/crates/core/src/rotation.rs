//! Rotation of the low-rank factors to reduce their own quantization error.
//!
//! For an orthogonal `Ω`, `(LΩ)(ΩᵀR) = LR`, so rotating the factors leaves the
//! full-precision branch unchanged while moving `L` and `R` relative to the
//! quantizer grid. `Ω = cayley(A)` for a skew-symmetric `A`, optimized with
//! Adam from `A = 0` against
//! `mean((Q(LΩ) − LΩ)²) + mean((Q(ΩᵀR) − ΩᵀR)²)`.

use crate::absorber::running_min;
use crate::error::{Error, Result};
use crate::formats::{fake_quant, FormatSpec, ScaleKind};
use crate::numerics::{cayley_pullback, cayley_retract, orthogonality_defect, AdamState, Matrix, SkewParam};

/// Orthogonality required of any `Ω` passed to [`rotation_loss`].
pub const LOSS_ORTHO_TOL: f64 = 1e-8;
/// Orthogonality guaranteed for every accepted iterate.
pub const ITERATE_ORTHO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RotationConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub quantizer: FormatSpec,
    pub seed: u64,
    pub keep_best: bool,
}

impl RotationConfig {
    pub const DEFAULT_STEPS: usize = 500;

    /// 500 steps; lr 0.5 for fp16-scaled formats (SINT4), 0.1 otherwise.
    pub fn for_quantizer(quantizer: FormatSpec) -> Self {
        Self {
            learning_rate: default_rotation_lr(&quantizer),
            steps: Self::DEFAULT_STEPS,
            quantizer,
            seed: 0,
            keep_best: true,
        }
    }
}

pub fn default_rotation_lr(quantizer: &FormatSpec) -> f64 {
    if quantizer.scale_kind == ScaleKind::Fp16 {
        5e-1
    } else {
        1e-1
    }
}

fn check_dims(l: &Matrix, r: &Matrix, omega: &Matrix) -> Result<()> {
    let rank = l.cols();
    if r.rows() != rank || omega.shape() != (rank, rank) {
        return Err(Error::Shape(format!(
            "L {:?}, Ω {:?}, R {:?} are not rank-consistent",
            l.shape(),
            omega.shape(),
            r.shape()
        )));
    }
    Ok(())
}

/// Quantization MSE of `LΩ` plus that of `ΩᵀR`.
pub fn rotation_loss(l: &Matrix, r: &Matrix, omega: &Matrix, q: &FormatSpec) -> Result<f64> {
    check_dims(l, r, omega)?;
    let defect = orthogonality_defect(omega);
    if defect > LOSS_ORTHO_TOL {
        return Err(Error::Precondition(format!("Ω is not orthogonal (‖ΩᵀΩ − I‖ = {defect:e})")));
    }
    Ok(loss_and_grad(l, r, omega, q, false)?.0)
}

/// Loss and (optionally) its gradient with respect to `Ω`, quantizer outputs frozen.
fn loss_and_grad(l: &Matrix, r: &Matrix, omega: &Matrix, q: &FormatSpec, with_grad: bool) -> Result<(f64, Option<Matrix>)> {
    let lo = l.matmul(omega)?;
    let otr = omega.t_matmul(r)?;
    let e1 = fake_quant(&lo, q).sub(&lo)?;
    let e2 = fake_quant(&otr, q).sub(&otr)?;
    let loss = e1.mean_square() + e2.mean_square();
    if !with_grad {
        return Ok((loss, None));
    }
    // ∂/∂Ω mean(E1²) = −2/|L| · Lᵀ E1 ;  ∂/∂Ω mean(E2²) = −2/|R| · R E2ᵀ
    let mut g = l.t_matmul(&e1)?.scale(-2.0 / e1.len() as f64);
    g.axpy(-2.0 / e2.len() as f64, &r.matmul_t(&e2)?)?;
    Ok((loss, Some(g)))
}

/// Gradient of the rotation loss with respect to the skew parameter, projected
/// onto the skew-symmetric subspace: `(G − Gᵀ)/2`.
pub fn rotation_grad(l: &Matrix, r: &Matrix, a: &SkewParam, q: &FormatSpec) -> Result<Matrix> {
    let omega = cayley_retract(a)?;
    check_dims(l, r, &omega)?;
    let (_, g) = loss_and_grad(l, r, &omega, q, true)?;
    Ok(cayley_pullback(a, &omega, &g.expect("requested"))?.skew_part())
}

/// Result of [`optimize_rotation`].
#[derive(Debug, Clone)]
pub struct RotationOutcome {
    pub omega: Matrix,
    /// `trace[0]` is the identity loss, `trace[k]` the loss after step `k`.
    pub trace: Vec<f64>,
    pub best_step: usize,
}

impl RotationOutcome {
    pub fn identity_loss(&self) -> f64 {
        self.trace[0]
    }

    pub fn best_loss(&self) -> f64 {
        self.trace[self.best_step]
    }

    pub fn best_trace(&self) -> Vec<f64> {
        running_min(&self.trace)
    }
}

/// Cayley-parameterized Adam descent on the rotation loss, starting at `Ω = I`.
pub fn optimize_rotation(l: &Matrix, r: &Matrix, cfg: &RotationConfig) -> Result<RotationOutcome> {
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Parameter(format!("learning rate must be positive, got {}", cfg.learning_rate)));
    }
    let rank = l.cols();
    check_dims(l, r, &Matrix::zeros(rank, rank))?;

    let mut a = SkewParam::zeros(rank);
    let mut adam = AdamState::new(&[(rank, rank)]);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut best: Option<(usize, f64, Matrix)> = None;
    let mut last = Matrix::identity(rank);

    for step in 0..=cfg.steps {
        let omega = cayley_retract(&a)?;
        let defect = orthogonality_defect(&omega);
        if defect > ITERATE_ORTHO_TOL {
            return Err(Error::Numeric(format!("rotation lost orthogonality at step {step} (defect {defect:e})")));
        }
        let (loss, g) = loss_and_grad(l, r, &omega, &cfg.quantizer, step < cfg.steps)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "rotation loss became non-finite at step {step}; last finite loss {:e}",
                trace.last().copied().unwrap_or(f64::NAN)
            )));
        }
        trace.push(loss);
        if cfg.keep_best && best.as_ref().is_none_or(|b| loss < b.1) {
            best = Some((step, loss, omega.clone()));
        }
        let Some(g) = g else {
            last = omega;
            break;
        };
        let grad_a = cayley_pullback(&a, &omega, &g)?.skew_part();
        let mut param = a.matrix().clone();
        crate::numerics::adam_step(&mut adam, &mut param, &grad_a, cfg.learning_rate)?;
        a.set(param);
        last = omega;
    }

    let (best_step, omega) = match best {
        Some((step, _, omega)) => (step, omega),
        None => (trace.len() - 1, last),
    };
    Ok(RotationOutcome { omega, trace, best_step })
}

/// `(LΩ, ΩᵀR)`.
pub fn fuse_rotation(l: &Matrix, r: &Matrix, omega: &Matrix) -> Result<(Matrix, Matrix)> {
    check_dims(l, r, omega)?;
    Ok((l.matmul(omega)?, omega.t_matmul(r)?))
}
