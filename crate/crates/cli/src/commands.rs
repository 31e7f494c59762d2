use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use loraq_core::bundle::{decode_bundle, decode_stats, decode_tensor, load_bundle, load_tensor, manifest_of, save_bundle, CalibrationStats, STATS_MAGIC};
use loraq_core::pipeline::{self, error_report, AblationGrid, BudgetPolicy, LayerBundle, LayerOptions, SmoothingInput};
use loraq_core::smoothing::default_grid;
use loraq_core::{make_format, FormatSpec, Matrix};

use crate::config::{RunConfig, DEFAULT_BUDGET, DEFAULT_Q1, DEFAULT_Q2};
use crate::{CliError, Common};

const DEFAULT_MIGRATION: f64 = 0.5;

/// A run configuration turned into library values.
struct Settings {
    q1: FormatSpec,
    q2: FormatSpec,
    policy: BudgetPolicy,
    opts: LayerOptions,
    out: Option<PathBuf>,
}

/// Prefixes a library error with the file it concerns.
fn at(path: &Path) -> impl Fn(loraq_core::Error) -> CliError + '_ {
    move |e| CliError { code: e.code(), message: format!("{}: {e}", path.display()) }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| at(path)(e.into()))
}

fn format_arg(name: Option<&str>) -> Result<Option<FormatSpec>, CliError> {
    Ok(name.map(make_format).transpose()?)
}

fn load_smoothing(path: &Path, cfg: &RunConfig) -> Result<SmoothingInput, CliError> {
    let bytes = read(path)?;
    let calib = if bytes.starts_with(STATS_MAGIC) {
        decode_stats(&bytes).map_err(at(path))?
    } else {
        CalibrationStats::from_activations(decode_tensor(&bytes).map_err(at(path))?.0)
    };
    Ok(match calib.activations {
        Some(activations) => SmoothingInput::Calibrate { activations, grid: default_grid() },
        None => SmoothingInput::Fixed {
            stats: calib.stats,
            alpha_mig: cfg.alpha_mig.unwrap_or(DEFAULT_MIGRATION),
            beta_mig: cfg.beta_mig.unwrap_or(DEFAULT_MIGRATION),
        },
    })
}

fn settings(cfg: &RunConfig) -> Result<Settings, CliError> {
    let q1 = make_format(cfg.q1.as_deref().unwrap_or(DEFAULT_Q1))?;
    let q2 = make_format(cfg.q2.as_deref().unwrap_or(DEFAULT_Q2))?;
    let policy = BudgetPolicy::for_format(cfg.budget.unwrap_or(DEFAULT_BUDGET), &q2);
    let smoothing = cfg.stats.as_deref().map(|p| load_smoothing(p, cfg)).transpose()?;
    let opts = LayerOptions {
        optimized_lr: cfg.optimize.unwrap_or(true),
        rotations: cfg.rotate.unwrap_or(true),
        rank_override: cfg.rank,
        smoothing,
        smoothing_rank: cfg.smoothing_rank,
        absorb_steps: cfg.steps,
        absorb_lr: cfg.lr,
        rotation_steps: cfg.rot_steps,
        rotation_lr: cfg.rot_lr,
        seed: cfg.seed.unwrap_or(0),
    };
    Ok(Settings {
        q1,
        q2,
        policy,
        opts,
        out: cfg.out.clone(),
    })
}

fn output_paths(weights: &[PathBuf], out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let as_dir = |dir: &Path| -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| at(dir)(e.into()))?;
        Ok(weights
            .iter()
            .map(|w| dir.join(w.file_stem().unwrap_or(w.as_os_str())).with_extension("lrqb"))
            .collect())
    };
    match out {
        Some(dir) if weights.len() > 1 || dir.is_dir() => as_dir(dir),
        Some(file) => Ok(vec![file.to_path_buf()]),
        None => Ok(weights.iter().map(|w| w.with_extension("lrqb")).collect()),
    }
}

fn sci(v: f64) -> String {
    format!("{v:.4e}")
}

fn print_quantized(weight: &Path, out: &Path, b: &LayerBundle, report: &pipeline::WeightReport) {
    let m = &b.meta;
    let budget = b.budget_report();
    println!("{} -> {}", weight.display(), out.display());
    println!(
        "  shape {}x{}  rank {} (requested {})  q1 {}  q2 {}",
        m.rows, m.cols, m.rank, m.requested_rank, m.q1.name, m.q2.name
    );
    if let Some(s) = &m.smoothing {
        println!("  smoothing: alpha {} beta {}", s.alpha_mig, s.beta_mig);
    }
    for (label, stage) in [("absorb", &m.absorb), ("rotate", &m.rotation)] {
        match stage {
            Some(s) => println!(
                "  {label}: {} steps lr {}  loss {} -> best {} (step {}), final {}",
                s.steps,
                s.learning_rate,
                sci(s.initial_loss),
                sci(s.best_loss),
                s.best_step,
                sci(s.final_loss)
            ),
            None => println!("  {label}: off"),
        }
    }
    println!(
        "  error: weight {} (rel {})  residual mse {}  low-rank mse {}",
        sci(report.weight_err),
        sci(report.weight_err_rel),
        sci(report.residual_mse),
        sci(report.lowrank_mse)
    );
    let limit = budget.budget_bits_per_channel.map_or("rank override".to_string(), |b| format!("budget {b}"));
    println!(
        "  budget: {} x {} bits = {} bits/channel ({limit}{}); scales {} bits/channel, {} bits total",
        budget.rank,
        budget.bits_per_value,
        budget.payload_bits_per_channel,
        if budget.within_budget { "" } else { ", EXCEEDED" },
        budget.scale_bits_per_channel,
        budget.total_scale_bits
    );
}

pub fn quantize(common: &Common, weights: &[PathBuf]) -> Result<(), CliError> {
    let cfg = common.resolved()?;
    let s = settings(&cfg)?;
    let outs = output_paths(weights, s.out.as_deref())?;
    let named = weights
        .iter()
        .map(|p| Ok((p.display().to_string(), load_tensor(p).map_err(at(p))?)))
        .collect::<Result<Vec<(String, Matrix)>, CliError>>()?;
    let results = pipeline::assemble_batch(&named, &s.q1, &s.q2, &s.policy, &s.opts);
    for ((weight, out), (_, result)) in weights.iter().zip(&outs).zip(results) {
        let item = result?;
        for w in &item.bundle.meta.warnings {
            eprintln!("warning: {}: {w}", weight.display());
        }
        save_bundle(out, &item.bundle).map_err(at(out))?;
        if common.machine {
            let line = json!({
                "weight": weight,
                "bundle": out,
                "meta": item.bundle.meta,
                "report": item.report,
                "budget": item.bundle.budget_report(),
            });
            println!("{line}");
        } else {
            print_quantized(weight, out, &item.bundle, &item.report);
        }
    }
    Ok(())
}

pub fn evaluate(common: &Common, bundle: &Path, weight: &Path, act: Option<&Path>) -> Result<(), CliError> {
    let cfg = common.resolved()?;
    let act_format = format_arg(cfg.act_format.as_deref())?;
    let lr_act_format = format_arg(cfg.lr_act_format.as_deref())?;
    let b = load_bundle(bundle).map_err(at(bundle))?;
    let w = load_tensor(weight).map_err(at(weight))?;
    let x = match act {
        Some(p) => load_tensor(p).map_err(at(p))?,
        None => Matrix::identity(w.rows()),
    };
    let report = error_report(&w, &x, &b, act_format.as_ref())?;
    let mixed = match &lr_act_format {
        Some(f) => {
            let y = pipeline::forward(&b, &x, act_format.as_ref(), Some(f))?;
            Some(x.matmul(&w)?.sub(&y)?.frobenius_norm())
        }
        None => None,
    };
    if common.machine {
        let mut value = serde_json::to_value(&report).expect("serializable");
        if let Some(m) = mixed {
            value["mixed_matmul_err"] = json!(m);
        }
        println!("{value}");
        return Ok(());
    }
    println!("weight_err      {}", report.weight_err);
    println!("weight_err_rel  {}", report.weight_err_rel);
    println!("matmul_err      {}", report.matmul_err);
    println!("matmul_err_rel  {}", report.matmul_err_rel);
    println!("bound_rhs       {}", report.bound_rhs);
    println!("activation_err  {}", report.activation_err);
    println!("residual_mse    {}", report.residual_mse);
    println!("lowrank_mse     {}", report.lowrank_mse);
    if let Some(m) = mixed {
        println!("mixed_matmul_err {m}");
    }
    Ok(())
}

pub fn ablate(common: &Common, weights: &[PathBuf]) -> Result<(), CliError> {
    let cfg = common.resolved()?;
    let s = settings(&cfg)?;
    let mats = weights.iter().map(|p| load_tensor(p).map_err(at(p))).collect::<Result<Vec<_>, CliError>>()?;
    let grids = mats
        .par_iter()
        .map(|w| pipeline::ablate(w, &s.q1, &s.q2, &s.policy, &s.opts))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = AblationGrid::mean(&grids)?;
    let order = [(true, true), (true, false), (false, true), (false, false)];
    if common.machine {
        let cells: Vec<_> = order.iter().map(|&(o, r)| mean.cell(o, r)).collect();
        println!("{}", json!({ "q1": s.q1.name, "q2": s.q2.name, "weights": weights.len(), "cells": cells }));
        return Ok(());
    }
    let rank = s.opts.rank_override.map_or_else(|| pipeline::rank_for_budget(&s.policy).map(|r| r.to_string()), |r| Ok(r.to_string()))?;
    println!("{:<18} {:>6}  {:<12} {:<9} {:>14} {:>14}", "low-rank format", "rank", "optimized_lr", "rotations", "mean_rel_err", "mean_mse");
    for (o, r) in order {
        let c = mean.cell(o, r);
        let mark = |b: bool| if b { "yes" } else { "no" };
        println!(
            "{:<18} {:>6}  {:<12} {:<9} {:>14} {:>14}",
            s.q2.name,
            rank,
            mark(o),
            mark(r),
            sci(c.weight_err_rel),
            sci(c.weight_mse)
        );
    }
    Ok(())
}

pub fn inspect(path: &Path, machine: bool) -> Result<(), CliError> {
    let b = decode_bundle(&read(path)?).map_err(at(path))?;
    let manifest = manifest_of(&b);
    let budget = b.budget_report();
    if machine {
        println!("{}", json!({ "manifest": manifest, "budget": budget }));
        return Ok(());
    }
    println!("{}", serde_json::to_string_pretty(&manifest).expect("serializable"));
    for (label, t) in [("residual", &b.residual), ("lowrank L", &b.lowrank_l), ("lowrank R", &b.lowrank_r)] {
        let (payload, scales) = t.storage_bits();
        println!("{label:<10} {}x{}  {}  {payload} code bits, {scales} scale bits", t.rows(), t.cols(), t.format());
    }
    println!(
        "budget: {} x {} = {} bits/channel; scale overhead {} bits/channel",
        budget.rank, budget.bits_per_value, budget.payload_bits_per_channel, budget.scale_bits_per_channel
    );
    Ok(())
}
