//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::time::{Duration, Instant};

use loraq_core::absorber::{absorption_loss, init_factors, optimize_factors, AbsorbConfig};
use loraq_core::bundle::{decode_bundle, encode_bundle, load_bundle, save_bundle};
use loraq_core::formats::REGISTERED_FORMATS;
use loraq_core::numerics::{truncated_svd, Svd};
use loraq_core::pipeline::{ablate, assemble_layer, error_report, rank_for_budget, reconstruct_weight, AblationGrid, BudgetPolicy, LayerOptions, BOUND_SLACK};
use loraq_core::rotation::{fuse_rotation, optimize_rotation, rotation_loss, RotationConfig};
use loraq_core::smoothing::{apply_smoothing, compute_channel_stats, default_grid, grid_search_migration, score_migration, smooth_activations};
use loraq_core::{fake_quant, make_format, Error, Matrix};
use rand::Rng;
use rayon::prelude::*;

const ABSORB_GRAD_TOL: f64 = 1e-5;
const ROTATION_GRAD_TOL: f64 = 1e-4;
const RECOVERY_TOL: f64 = 1e-9;
const FUSION_TOL: f64 = 1e-9;
const SMOOTHING_TOL: f64 = 1e-10;
const MIN_ABSORB_WIN_RATE: f64 = 0.95;
const MIN_ROTATION_WIN_RATE: f64 = 0.90;
const MIN_ABLATION_GAP: f64 = 0.05;
/// SVD rank for the corpus criteria on absorption and rotation.
const CORPUS_RANK: usize = 32;

type Criterion<'a> = (u32, &'static str, Duration, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn codec_idempotence() -> Outcome {
    let failures: usize = REGISTERED_FORMATS
        .par_iter()
        .map(|name| {
            let f = make_format(name).unwrap();
            let mut rng = common::rng(1);
            (0..200)
                .filter(|k| {
                    let (r, c) = (rng.random_range(1..=128), rng.random_range(1..=192));
                    let m = if k % 2 == 0 {
                        common::heavy_tailed(rng.random(), r, c)
                    } else {
                        let width = 10f64.powi(rng.random_range(-4..4));
                        common::uniform(&mut rng, r, c, width)
                    };
                    let once = fake_quant(&m, &f);
                    fake_quant(&once, &f) != once
                })
                .count()
        })
        .sum();
    outcome(failures == 0, format!("{failures} non-idempotent of {} matrices", 6 * 200))
}

fn product_error_bound() -> Outcome {
    let results: Vec<(bool, f64)> = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let c = common::bound_case(10_000 + seed);
            let opts = LayerOptions { rank_override: Some(c.rank), absorb_steps: Some(40), rotation_steps: Some(20), ..LayerOptions::default() };
            let b = assemble_layer(&c.w, &c.q1, &c.q2, &BudgetPolicy::new(512, 4), &opts).unwrap();
            let xq = c.act.as_ref().map_or_else(|| c.x.clone(), |f| fake_quant(&c.x, f));
            let what = reconstruct_weight(&b).unwrap();
            let lhs = c.x.matmul(&c.w).unwrap().sub(&xq.matmul(&what).unwrap()).unwrap().frobenius_norm();
            let rhs = c.x.sub(&xq).unwrap().frobenius_norm() * c.w.frobenius_norm() + xq.frobenius_norm() * c.w.sub(&what).unwrap().frobenius_norm();
            let reported = error_report(&c.w, &c.x, &b, c.act.as_ref()).is_ok();
            (reported && lhs <= rhs * (1.0 + BOUND_SLACK) + f64::MIN_POSITIVE, if rhs > 0.0 { lhs / rhs } else { 0.0 })
        })
        .collect();
    let violations = results.iter().filter(|r| !r.0).count();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(violations == 0, format!("{violations} violations in 200 triples, max lhs/rhs {worst:.4}"))
}

fn gradient_fidelity() -> Outcome {
    let fmt = |k: u64| make_format(REGISTERED_FORMATS[k as usize % REGISTERED_FORMATS.len()]).unwrap();
    let absorb = (0..20u64).map(|s| common::absorption_fd_error(100 + s, &fmt(s))).fold(0.0, f64::max);
    let rotate = (0..20u64).map(|s| common::rotation_fd_error(200 + s, &fmt(s))).fold(0.0, f64::max);
    outcome(
        absorb <= ABSORB_GRAD_TOL && rotate <= ROTATION_GRAD_TOL,
        format!("max relative error: absorption {absorb:.2e} (tol {ABSORB_GRAD_TOL:e}), rotation {rotate:.2e} (tol {ROTATION_GRAD_TOL:e})"),
    )
}

fn svd_optimality() -> Outcome {
    let results: Vec<(usize, f64)> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = common::rng(300 + seed);
            let (d, n) = (rng.random_range(8..40), rng.random_range(8..40));
            let rank = rng.random_range(1..d.min(n));
            let a = common::heavy_tailed(seed, d, n);
            let (l, r) = truncated_svd(&a, rank).unwrap();
            let best = a.sub(&l.matmul(&r).unwrap()).unwrap().frobenius_norm();
            let mut beaten = 0;
            for k in 0..1000 {
                let (cl, cr) = if k % 2 == 0 {
                    (common::gaussian(&mut rng, d, rank, 0.05), common::gaussian(&mut rng, rank, n, 1.0))
                } else {
                    let scale = 10f64.powi(-rng.random_range(1..6));
                    let mut cl = l.clone();
                    let mut cr = r.clone();
                    cl.axpy(1.0, &common::gaussian(&mut rng, d, rank, scale)).unwrap();
                    cr.axpy(1.0, &common::gaussian(&mut rng, rank, n, scale)).unwrap();
                    (cl, cr)
                };
                if a.sub(&cl.matmul(&cr).unwrap()).unwrap().frobenius_norm() < best {
                    beaten += 1;
                }
            }
            let full = Svd::compute(&a).unwrap().reconstruct(d.min(n));
            (beaten, common::rel_err(&full, &a))
        })
        .collect();
    let beaten: usize = results.iter().map(|r| r.0).sum();
    let recovery = results.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(
        beaten == 0 && recovery <= RECOVERY_TOL,
        format!("{beaten} of 10000 competitors beat the truncation; full-rank recovery {recovery:.2e} (tol {RECOVERY_TOL:e})"),
    )
}

fn optimization_efficacy(corpus: &[Matrix]) -> Outcome {
    let q = make_format("SINT4").unwrap();
    let cfg = AbsorbConfig::for_quantizer(q.clone());
    let wins = corpus
        .par_iter()
        .filter(|w| {
            let out = optimize_factors(w, CORPUS_RANK, &cfg).unwrap();
            let start = absorption_loss(w, &init_factors(w, CORPUS_RANK).unwrap(), &q).unwrap();
            out.best_loss() < start
        })
        .count();
    let rate = wins as f64 / corpus.len() as f64;
    outcome(
        rate >= MIN_ABSORB_WIN_RATE,
        format!("{wins}/{} strictly improved (SINT4, rank {CORPUS_RANK}, {} steps, lr {:e})", corpus.len(), cfg.steps, cfg.learning_rate),
    )
}

fn rotation_efficacy(corpus: &[Matrix]) -> Outcome {
    let q = make_format("MXFP4e2").unwrap();
    let cfg = RotationConfig::for_quantizer(q.clone());
    let results: Vec<(bool, bool, f64)> = corpus
        .par_iter()
        .map(|w| {
            let (l, r) = init_factors(w, CORPUS_RANK).unwrap().branch();
            let out = optimize_rotation(&l, &r, &cfg).unwrap();
            let identity = rotation_loss(&l, &r, &Matrix::identity(CORPUS_RANK), &q).unwrap();
            let rotated = rotation_loss(&l, &r, &out.omega, &q).unwrap();
            let (lf, rf) = fuse_rotation(&l, &r, &out.omega).unwrap();
            let drift = common::rel_err(&lf.matmul(&rf).unwrap(), &l.matmul(&r).unwrap());
            (rotated <= identity, rotated < identity, drift)
        })
        .collect();
    let never_worse = results.iter().all(|r| r.0);
    let wins = results.iter().filter(|r| r.1).count();
    let drift = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let rate = wins as f64 / corpus.len() as f64;
    outcome(
        never_worse && rate >= MIN_ROTATION_WIN_RATE && drift <= FUSION_TOL,
        format!("never worse: {never_worse}; {wins}/{} strictly lower; product drift {drift:.2e} (tol {FUSION_TOL:e})", corpus.len()),
    )
}

fn ablation_direction(corpus: &[Matrix]) -> Outcome {
    let q1 = make_format("MXFP4e2").unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, rank) in [("MXFP8e4", 64), ("MXFP6e2", 96), ("MXFP4e2", 128)] {
        let q2 = make_format(name).unwrap();
        let opts = LayerOptions { rank_override: Some(rank), ..LayerOptions::default() };
        let grids: Vec<AblationGrid> = corpus.par_iter().map(|w| ablate(w, &q1, &q2, &BudgetPolicy::for_format(512, &q2), &opts).unwrap()).collect();
        let mean = AblationGrid::mean(&grids).unwrap();
        let e = |o, r| mean.cell(o, r).weight_err_rel;
        let (tt, tf, ft, ff) = (e(true, true), e(true, false), e(false, true), e(false, false));
        let gap = (ff - tt) / ff;
        let ok = tt <= tf && tf <= ff && tt <= ft && gap >= MIN_ABLATION_GAP;
        pass &= ok;
        parts.push(format!("{name} r{rank}: tt {tt:.5} tf {tf:.5} ft {ft:.5} ff {ff:.5} gap {:.1}%", gap * 100.0));
    }
    outcome(pass, parts.join("; "))
}

fn budget_arithmetic() -> Outcome {
    let a = rank_for_budget(&BudgetPolicy::new(512, 16)).unwrap();
    let b = rank_for_budget(&BudgetPolicy::new(512, 4)).unwrap();
    outcome(a == 32 && b == 128, format!("512/16 -> {a}, 512/4 -> {b}"))
}

fn round_trip_and_fuzz() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mismatches = (0..50u64)
        .filter(|&seed| {
            let b = common::random_bundle(5000 + seed);
            let path = dir.path().join(format!("{seed}.lrqb"));
            save_bundle(&path, &b).unwrap();
            let back = load_bundle(&path).unwrap();
            let same = back.residual == b.residual && back.lowrank_l == b.lowrank_l && back.lowrank_r == b.lowrank_r && back.gamma == b.gamma && back.meta == b.meta;
            !(same && encode_bundle(&back).unwrap() == std::fs::read(&path).unwrap())
        })
        .count();
    let bytes = encode_bundle(&common::random_bundle(7)).unwrap();
    let untyped = (0..bytes.len())
        .filter(|&cut| {
            let r = std::panic::catch_unwind(|| decode_bundle(&bytes[..cut]));
            !matches!(r, Ok(Err(Error::Corrupt { .. } | Error::Format(_) | Error::Version { .. })))
        })
        .count();
    outcome(
        mismatches == 0 && untyped == 0,
        format!("{mismatches}/50 round-trip mismatches; {untyped}/{} truncations without a typed error", bytes.len()),
    )
}

fn smoothing_identity() -> Outcome {
    let worst = (0..100u64)
        .map(|seed| {
            let mut rng = common::rng(700 + seed);
            let (s, d, n) = (rng.random_range(1..32), rng.random_range(1..32), rng.random_range(1..32));
            let x = common::gaussian(&mut rng, s, d, 2.0);
            let w = common::heavy_tailed(seed, d, n);
            let gamma = compute_channel_stats(&x).act_max.iter().map(|a| if *a > 0.0 { a * rng.random_range(0.1..10.0) } else { 1.0 }).collect::<Vec<_>>();
            let y = smooth_activations(&x, &gamma).unwrap().matmul(&apply_smoothing(&w, &gamma).unwrap()).unwrap();
            common::rel_err(&y, &x.matmul(&w).unwrap())
        })
        .fold(0.0, f64::max);
    let (x, w) = common::outlier_instance(0);
    let q = make_format("SINT4").unwrap();
    let res = grid_search_migration(&x, &w, &default_grid(), 32, &q).unwrap();
    let (_, trivial) = score_migration(&x, &w, &compute_channel_stats(&x), 0.0, 0.0, 32, &q).unwrap();
    let chosen = (res.alpha_mig, res.beta_mig);
    outcome(
        worst <= SMOOTHING_TOL && chosen != (0.0, 0.0) && res.search_score < trivial,
        format!("max product drift {worst:.2e} (tol {SMOOTHING_TOL:e}); outlier instance picks {chosen:?}, score {:.3e} vs {trivial:.3e} at (0, 0)", res.search_score),
    )
}

fn main() {
    if let Ok(threads) = std::env::var("LORAQ_THREADS") {
        if let Ok(n) = threads.parse() {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
        }
    }
    let corpus = common::frozen_corpus();
    let criteria: Vec<Criterion> = vec![
        (1, "codec idempotence", Duration::from_secs(30), Box::new(codec_idempotence)),
        (2, "product error bound", Duration::from_secs(30), Box::new(product_error_bound)),
        (3, "gradient fidelity", Duration::from_secs(60), Box::new(gradient_fidelity)),
        (4, "SVD optimality", Duration::from_secs(60), Box::new(svd_optimality)),
        (5, "absorption efficacy", Duration::from_secs(600), Box::new(|| optimization_efficacy(&corpus))),
        (6, "rotation efficacy", Duration::from_secs(300), Box::new(|| rotation_efficacy(&corpus))),
        (7, "ablation direction", Duration::from_secs(900), Box::new(|| ablation_direction(&corpus))),
        (8, "budget arithmetic", Duration::from_secs(1), Box::new(budget_arithmetic)),
        (9, "round trip and fuzz", Duration::from_secs(60), Box::new(round_trip_and_fuzz)),
        (10, "smoothing identity", Duration::from_secs(60), Box::new(smoothing_identity)),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in &criteria {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= *limit;
        failed += usize::from(!pass);
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
