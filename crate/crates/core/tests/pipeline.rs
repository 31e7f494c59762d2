mod common;

use loraq_core::bundle::CalibrationStats;
use loraq_core::pipeline::{
    ablate, assemble_layer, error_report, forward, reconstruct_original, reconstruct_weight, rtn_matmul_error, BudgetPolicy, LayerOptions, SmoothingInput, BOUND_SLACK,
};
use loraq_core::smoothing::{default_grid, smooth_activations};
use loraq_core::{dequantize, fake_quant, make_format, FormatSpec, Matrix};
use rayon::prelude::*;

fn quick() -> LayerOptions {
    LayerOptions { absorb_steps: Some(40), rotation_steps: Some(20), ..LayerOptions::default() }
}

/// Toggle example: a 96×96 weight, rank 16, MXFP4e2 on both branches.
#[test]
fn full_configuration_beats_partial_ones() {
    let w = common::heavy_tailed(77, 96, 96);
    let q = make_format("MXFP4e2").unwrap();
    let opts = LayerOptions { rank_override: Some(16), ..LayerOptions::default() };
    let grid = ablate(&w, &q, &q, &BudgetPolicy::for_format(512, &q), &opts).unwrap();
    let full = grid.cell(true, true).weight_err_rel;
    assert!(full < grid.cell(false, false).weight_err_rel);
    assert!(full < grid.cell(true, false).weight_err_rel);
}

/// W4A4 forward pass error against plain round-to-nearest.
#[test]
fn forward_beats_rtn() {
    let q = make_format("SINT4").unwrap();
    let policy = BudgetPolicy::for_format(512, &q);
    let wins = (0..100u64)
        .into_par_iter()
        .filter(|&seed| {
            let mut rng = common::rng(seed + 500);
            let x = common::gaussian(&mut rng, 16, 64, 1.0);
            let w = common::heavy_tailed(seed, 64, 48);
            let b = assemble_layer(&w, &q, &q, &policy, &LayerOptions::default()).unwrap();
            let y = forward(&b, &x, Some(&q), None).unwrap();
            let err = x.matmul(&w).unwrap().sub(&y).unwrap().frobenius_norm();
            err <= rtn_matmul_error(&w, &x, &q, Some(&q)).unwrap()
        })
        .count();
    assert!(wins >= 95, "{wins}/100");
}

#[test]
fn forward_matches_reconstruction() {
    let w = common::heavy_tailed(4, 24, 40);
    let q1 = make_format("MXINT4").unwrap();
    let q2 = make_format("MXFP8e4").unwrap();
    let b = assemble_layer(&w, &q1, &q2, &BudgetPolicy::for_format(64, &q2), &quick()).unwrap();
    let x = common::gaussian(&mut common::rng(4), 5, 24, 1.0);
    let y = forward(&b, &x, None, None).unwrap();
    let direct = x.matmul(&reconstruct_weight(&b).unwrap()).unwrap();
    assert!(common::rel_err(&y, &direct) <= 1e-12);
}

/// With an exact low-rank format and no rotation, Ŵ − W is the residual
/// quantizer's error on W + LR, i.e. the absorption objective.
#[test]
fn reconstruction_identity() {
    let w = common::heavy_tailed(6, 32, 48);
    let q1 = make_format("MXFP4e2").unwrap();
    let id = FormatSpec::identity();
    let opts = LayerOptions { rotations: false, rank_override: Some(6), ..quick() };
    let b = assemble_layer(&w, &q1, &id, &BudgetPolicy::new(512, 64), &opts).unwrap();
    let what = reconstruct_weight(&b).unwrap();
    let mse = what.sub(&w).unwrap().mean_square();
    let absorbed = b.meta.absorb.as_ref().unwrap().best_loss;
    assert!((mse - absorbed).abs() <= 1e-9 * absorbed);
    let a = b.lowrank_product().unwrap();
    let shifted = w.sub(&a).unwrap();
    assert!(common::rel_err(&dequantize(&b.residual).unwrap(), &fake_quant(&shifted, &q1)) <= 1e-12);
}

#[test]
fn product_error_bound_sweep() {
    (0..50u64).into_par_iter().for_each(|seed| {
        let c = common::bound_case(seed);
        let opts = LayerOptions { rank_override: Some(c.rank), ..quick() };
        let b = assemble_layer(&c.w, &c.q1, &c.q2, &BudgetPolicy::new(512, 4), &opts).unwrap();
        let r = error_report(&c.w, &c.x, &b, c.act.as_ref()).unwrap();
        // independent evaluation in the direct form
        let xq = c.act.as_ref().map_or_else(|| c.x.clone(), |f| fake_quant(&c.x, f));
        let what = reconstruct_weight(&b).unwrap();
        let lhs = c.x.matmul(&c.w).unwrap().sub(&xq.matmul(&what).unwrap()).unwrap().frobenius_norm();
        let rhs = c.x.sub(&xq).unwrap().frobenius_norm() * c.w.frobenius_norm() + xq.frobenius_norm() * c.w.sub(&what).unwrap().frobenius_norm();
        assert!(lhs <= rhs * (1.0 + BOUND_SLACK) + 1e-300, "seed {seed}");
        assert!((r.matmul_err - lhs).abs() <= 1e-9 * rhs.max(1e-300));
    });
}

#[test]
fn smoothing_from_calibration_set() {
    let (x, w) = common::outlier_instance(3);
    let q = make_format("SINT4").unwrap();
    let opts = LayerOptions { smoothing: Some(SmoothingInput::Calibrate { activations: x.clone(), grid: default_grid() }), ..quick() };
    let b = assemble_layer(&w, &q, &q, &BudgetPolicy::for_format(64, &q), &opts).unwrap();
    let g = b.gamma.as_ref().unwrap();
    let meta = b.meta.smoothing.as_ref().unwrap();
    assert_eq!(meta.grid_size, 121);
    assert_ne!((meta.alpha_mig, meta.beta_mig), (0.0, 0.0));
    // reconstruct_original undoes the smoothing
    let ws = reconstruct_weight(&b).unwrap();
    let xs = smooth_activations(&x, g).unwrap();
    let y1 = xs.matmul(&ws).unwrap();
    let y2 = x.matmul(&reconstruct_original(&b).unwrap()).unwrap();
    assert!(common::rel_err(&y1, &y2) <= 1e-12);

    let smoothed_err = error_report(&w, &x, &b, Some(&q)).unwrap().matmul_err;
    let plain = assemble_layer(&w, &q, &q, &BudgetPolicy::for_format(64, &q), &quick()).unwrap();
    assert!(smoothed_err < error_report(&w, &x, &plain, Some(&q)).unwrap().matmul_err);
}

#[test]
fn fixed_smoothing_from_stats() {
    let (x, w) = common::outlier_instance(5);
    let cal = CalibrationStats::from_activations(x);
    let q = make_format("MXINT4").unwrap();
    let opts = LayerOptions {
        smoothing: Some(SmoothingInput::Fixed { stats: cal.stats.clone(), alpha_mig: 0.5, beta_mig: 0.5 }),
        ..quick()
    };
    let b = assemble_layer(&w, &q, &q, &BudgetPolicy::for_format(64, &q), &opts).unwrap();
    assert!(b.meta.smoothing.as_ref().unwrap().search_score.is_none());
    assert_eq!(b.gamma.as_ref().unwrap().len(), 64);
}

#[test]
fn budget_accounting() {
    let w = common::heavy_tailed(8, 80, 200);
    for name in ["SINT4", "MXFP4e2", "MXFP6e2", "MXFP8e4"] {
        let q2 = make_format(name).unwrap();
        let b = assemble_layer(&w, &make_format("SINT4").unwrap(), &q2, &BudgetPolicy::for_format(512, &q2), &LayerOptions::baseline()).unwrap();
        let report = b.budget_report();
        assert!(report.within_budget, "{name}");
        assert_eq!(report.payload_bits_per_channel, (b.rank() as u64) * u64::from(q2.bits_per_value()));
        let (lp, _) = b.lowrank_l.storage_bits();
        let (rp, _) = b.lowrank_r.storage_bits();
        assert!(lp + rp >= report.total_payload_bits);
    }
}

#[test]
fn rank_is_capped_with_warning() {
    let w = common::heavy_tailed(9, 20, 30);
    let q = make_format("MXFP4e2").unwrap();
    let b = assemble_layer(&w, &q, &q, &BudgetPolicy::for_format(512, &q), &LayerOptions::baseline()).unwrap();
    assert_eq!((b.rank(), b.meta.requested_rank), (20, 128));
    assert_eq!(b.meta.warnings.len(), 1);
}

#[test]
fn assembly_is_deterministic() {
    let w = common::heavy_tailed(10, 40, 40);
    let q = make_format("MXFP4e2").unwrap();
    let policy = BudgetPolicy::for_format(64, &q);
    let a = assemble_layer(&w, &q, &q, &policy, &quick()).unwrap();
    let b = assemble_layer(&w, &q, &q, &policy, &quick()).unwrap();
    assert_eq!(a.residual, b.residual);
    assert_eq!(a.lowrank_l, b.lowrank_l);
    assert_eq!(a.lowrank_r, b.lowrank_r);
    assert_eq!(a.meta, b.meta);
}

#[test]
fn rejects_bad_inputs() {
    let q = make_format("SINT4").unwrap();
    let policy = BudgetPolicy::for_format(512, &q);
    let mut w = common::heavy_tailed(11, 8, 8);
    w.row_mut(2)[3] = f64::NAN;
    assert_eq!(assemble_layer(&w, &q, &q, &policy, &quick()).unwrap_err().code(), "E_NUMERIC");
    let w = common::heavy_tailed(11, 8, 8);
    assert_eq!(assemble_layer(&w, &q, &q, &BudgetPolicy::new(2, 4), &quick()).unwrap_err().code(), "E_BUDGET");
    let b = assemble_layer(&w, &q, &q, &policy, &quick()).unwrap();
    assert_eq!(error_report(&w, &Matrix::zeros(3, 9), &b, None).unwrap_err().code(), "E_SHAPE");
}
