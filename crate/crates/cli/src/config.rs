use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Run configuration. Every field is optional so a config file and the
/// command line can be layered; command-line values win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Residual-branch format.
    #[arg(long)]
    pub q1: Option<String>,
    /// Low-rank-branch format.
    #[arg(long)]
    pub q2: Option<String>,
    /// Low-rank budget in bits per output channel.
    #[arg(long, conflicts_with = "rank")]
    pub budget: Option<u32>,
    /// Explicit rank, replacing the budget rule.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Activation format for the residual branch (and the low-rank branch by default).
    #[arg(long)]
    pub act_format: Option<String>,
    /// Activation format for the low-rank branch.
    #[arg(long)]
    pub lr_act_format: Option<String>,
    #[arg(skip)]
    pub optimize: Option<bool>,
    #[arg(skip)]
    pub rotate: Option<bool>,
    /// Absorption steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Absorption learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Rotation steps.
    #[arg(long)]
    pub rot_steps: Option<usize>,
    /// Rotation learning rate.
    #[arg(long)]
    pub rot_lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Calibration statistics (LQS1) or activations (LQT1).
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Fixed migration strengths used when the statistics carry no activations.
    #[arg(long)]
    pub alpha_mig: Option<f64>,
    #[arg(long)]
    pub beta_mig: Option<f64>,
    /// SVD rank used when scoring smoothing candidates.
    #[arg(long)]
    pub smoothing_rank: Option<usize>,
    /// Output file, or directory when several weights are given.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const DEFAULT_Q1: &str = "SINT4";
pub const DEFAULT_Q2: &str = "SINT4";
pub const DEFAULT_BUDGET: u32 = 512;

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        if cfg.budget.is_some() && cfg.rank.is_some() {
            return Err(CliError::config(format!("{}: set either budget or rank, not both", path.display())));
        }
        Ok(cfg)
    }

    /// `self` overridden by `top`. A rank or budget in `top` replaces both in `self`.
    pub fn layered(self, top: RunConfig) -> RunConfig {
        let (budget, rank) = if top.budget.is_some() || top.rank.is_some() { (top.budget, top.rank) } else { (self.budget, self.rank) };
        RunConfig {
            q1: top.q1.or(self.q1),
            q2: top.q2.or(self.q2),
            budget,
            rank,
            act_format: top.act_format.or(self.act_format),
            lr_act_format: top.lr_act_format.or(self.lr_act_format),
            optimize: top.optimize.or(self.optimize),
            rotate: top.rotate.or(self.rotate),
            steps: top.steps.or(self.steps),
            lr: top.lr.or(self.lr),
            rot_steps: top.rot_steps.or(self.rot_steps),
            rot_lr: top.rot_lr.or(self.rot_lr),
            seed: top.seed.or(self.seed),
            stats: top.stats.or(self.stats),
            alpha_mig: top.alpha_mig.or(self.alpha_mig),
            beta_mig: top.beta_mig.or(self.beta_mig),
            smoothing_rank: top.smoothing_rank.or(self.smoothing_rank),
            out: top.out.or(self.out),
        }
    }
}
