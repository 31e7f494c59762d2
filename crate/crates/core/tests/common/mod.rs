#![allow(dead_code)]

use loraq_core::formats::{ElementCodec, FormatSpec, ScaleKind};
use loraq_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, half_width: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-half_width..half_width))
}

/// Student-t(3) entries plus a rank-4 component: a heavy-tailed stand-in for
/// a trained weight.
pub fn heavy_tailed(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = rng(seed);
    let t = StudentT::new(3.0).unwrap();
    let mut w = Matrix::from_fn(rows, cols, |_, _| t.sample(&mut rng) * 0.02);
    let u = gaussian(&mut rng, rows, 4, 1.0);
    let v = gaussian(&mut rng, 4, cols, 0.01);
    w.axpy(1.0, &u.matmul(&v).unwrap()).unwrap();
    w
}

pub const CORPUS_SIZE: usize = 20;
pub const CORPUS_DIM: usize = 96;

/// The frozen regression corpus: 20 seeded 96×96 heavy-tailed matrices.
pub fn frozen_corpus() -> Vec<Matrix> {
    (0..CORPUS_SIZE as u64).map(|s| heavy_tailed(1000 + s, CORPUS_DIM, CORPUS_DIM)).collect()
}

/// Signed int4 with e8m0 scales over blocks of 4, for hand-sized cases.
pub fn int4_block4() -> FormatSpec {
    FormatSpec::custom("int4-b4", 4, ScaleKind::E8m0, ElementCodec::Int { bits: 4 }).unwrap()
}

pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.sub(b).unwrap().frobenius_norm();
    let base = b.frobenius_norm();
    if base == 0.0 {
        diff
    } else {
        diff / base
    }
}

/// Reference Frobenius norm by direct summation.
pub fn naive_frobenius(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Relative error between the straight-through gradients of the absorption
/// loss and central differences of the same loss with `Q(W + LR)` held fixed.
pub fn absorption_fd_error(seed: u64, q: &FormatSpec) -> f64 {
    use loraq_core::absorber::{absorption_grads, init_factors, LowRankFactors};
    use loraq_core::numerics::{finite_diff_grad, relative_error};

    let mut rng = rng(seed);
    let (d, n) = (rng.random_range(6..14), rng.random_range(6..14));
    let rank = rng.random_range(1..=4);
    let w = gaussian(&mut rng, d, n, 0.5);
    let mut f = init_factors(&w, rank).unwrap();
    f.l.axpy(1.0, &gaussian(&mut rng, d, rank, 0.05)).unwrap();
    f.r.axpy(1.0, &gaussian(&mut rng, rank, n, 0.05)).unwrap();

    let frozen = loraq_core::fake_quant(&w.add(&f.product()).unwrap(), q);
    let loss = |l: &Matrix, r: &Matrix| frozen.sub(&w).unwrap().sub(&l.matmul(r).unwrap()).unwrap().mean_square();
    let eps = 1e-6;
    let fd_l = finite_diff_grad(|l| loss(l, &f.r), &f.l, eps);
    let fd_r = finite_diff_grad(|r| loss(&f.l, r), &f.r, eps);
    let (gl, gr) = absorption_grads(&w, &LowRankFactors::new(f.l.clone(), f.r.clone()).unwrap(), q).unwrap();
    let stack = |a: &Matrix, b: &Matrix| {
        let mut v = a.as_slice().to_vec();
        v.extend_from_slice(b.as_slice());
        Matrix::new(1, v.len(), v).unwrap()
    };
    relative_error(&stack(&gl, &gr), &stack(&fd_l, &fd_r), 1e-300)
}

/// Relative error between the skew gradient of the rotation loss and central
/// differences over the free (strictly upper) entries of `A`, with both
/// quantizer outputs held fixed at the base point.
pub fn rotation_fd_error(seed: u64, q: &FormatSpec) -> f64 {
    use loraq_core::numerics::{cayley_retract, finite_diff_grad, relative_error, SkewParam};
    use loraq_core::rotation::rotation_grad;

    let mut rng = rng(seed);
    let k = rng.random_range(2..=6);
    let (d, n) = (rng.random_range(k..20), rng.random_range(k..20));
    let l = gaussian(&mut rng, d, k, 1.0);
    let r = gaussian(&mut rng, k, n, 1.0);
    let a0 = SkewParam::project(&gaussian(&mut rng, k, k, 0.4));

    let skew_of = |x: &Matrix| {
        let upper = Matrix::from_fn(k, k, |i, j| if i < j { x[(i, j)] } else { 0.0 });
        SkewParam::new(upper.sub(&upper.transpose()).unwrap()).unwrap()
    };
    let x0 = Matrix::from_fn(k, k, |i, j| if i < j { a0.matrix()[(i, j)] } else { 0.0 });
    let omega0 = cayley_retract(&a0).unwrap();
    let q1 = loraq_core::fake_quant(&l.matmul(&omega0).unwrap(), q);
    let q2 = loraq_core::fake_quant(&omega0.t_matmul(&r).unwrap(), q);
    let loss = |x: &Matrix| {
        let omega = cayley_retract(&skew_of(x)).unwrap();
        q1.sub(&l.matmul(&omega).unwrap()).unwrap().mean_square() + q2.sub(&omega.t_matmul(&r).unwrap()).unwrap().mean_square()
    };
    let fd = finite_diff_grad(loss, &x0, 1e-6);
    let s = rotation_grad(&l, &r, &a0, q).unwrap();
    let analytic = Matrix::from_fn(k, k, |i, j| if i < j { 2.0 * s[(i, j)] } else { 0.0 });
    relative_error(&analytic, &fd, 1e-300)
}

/// Calibration set whose channel 5 runs 100× hotter than the rest.
pub fn outlier_instance(seed: u64) -> (Matrix, Matrix) {
    let mut rng = rng(seed);
    let mut x = gaussian(&mut rng, 256, 64, 1.0);
    for i in 0..x.rows() {
        x.row_mut(i)[5] *= 100.0;
    }
    let w = gaussian(&mut rng, 64, 48, 0.05);
    (x, w)
}

/// One random (X, W, Q1, Q2, activation format) instance for the product
/// error bound. Optimizer steps are kept short; the bound holds for any branch.
pub struct BoundCase {
    pub x: Matrix,
    pub w: Matrix,
    pub q1: FormatSpec,
    pub q2: FormatSpec,
    pub act: Option<FormatSpec>,
    pub rank: usize,
}

pub fn bound_case(seed: u64) -> BoundCase {
    use loraq_core::formats::REGISTERED_FORMATS;
    let mut rng = rng(seed);
    let pick = |rng: &mut ChaCha8Rng| loraq_core::make_format(REGISTERED_FORMATS[rng.random_range(0..REGISTERED_FORMATS.len())]).unwrap();
    let (d, n) = (rng.random_range(4..40), rng.random_range(4..40));
    let samples = rng.random_range(1..24);
    let w = if rng.random_bool(0.5) { heavy_tailed(seed, d, n) } else { gaussian(&mut rng, d, n, 0.1) };
    let x = gaussian(&mut rng, samples, d, 2.0);
    let q1 = pick(&mut rng);
    let q2 = pick(&mut rng);
    let act = if rng.random_bool(0.8) { Some(pick(&mut rng)) } else { None };
    let rank = rng.random_range(1..=d.min(n));
    BoundCase { x, w, q1, q2, act, rank }
}

/// A small bundle with random shape, formats, toggles and (sometimes) smoothing.
pub fn random_bundle(seed: u64) -> loraq_core::pipeline::LayerBundle {
    use loraq_core::formats::{PASSTHROUGH_FORMATS, REGISTERED_FORMATS};
    use loraq_core::pipeline::{assemble_layer, BudgetPolicy, LayerOptions, SmoothingInput};
    use loraq_core::smoothing::compute_channel_stats;

    let mut rng = rng(seed);
    let (d, n) = (rng.random_range(1..24), rng.random_range(1..40));
    let w = heavy_tailed(seed, d, n);
    let q1 = loraq_core::make_format(REGISTERED_FORMATS[rng.random_range(0..REGISTERED_FORMATS.len())]).unwrap();
    let q2 = if rng.random_bool(0.2) {
        loraq_core::make_format(PASSTHROUGH_FORMATS[rng.random_range(0..2)]).unwrap()
    } else {
        loraq_core::make_format(REGISTERED_FORMATS[rng.random_range(0..REGISTERED_FORMATS.len())]).unwrap()
    };
    let smoothing = rng.random_bool(0.5).then(|| SmoothingInput::Fixed {
        stats: compute_channel_stats(&gaussian(&mut rng, 8, d, 3.0)),
        alpha_mig: rng.random_range(0.0..=1.0),
        beta_mig: rng.random_range(0.0..=1.0),
    });
    let opts = LayerOptions {
        optimized_lr: rng.random_bool(0.5),
        rotations: rng.random_bool(0.5),
        rank_override: Some(rng.random_range(1..=d.min(n) + 2)),
        smoothing,
        absorb_steps: Some(10),
        rotation_steps: Some(5),
        seed,
        ..LayerOptions::default()
    };
    assemble_layer(&w, &q1, &q2, &BudgetPolicy::new(512, 8), &opts).unwrap()
}
