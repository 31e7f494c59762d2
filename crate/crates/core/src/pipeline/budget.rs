use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::FormatSpec;

/// Low-rank payload budget in bits per output channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    pub budget_bits_per_channel: u32,
    /// Bits per low-rank value (4, 6, 8 or 16 in practice).
    pub lowrank_bits: u32,
}

impl BudgetPolicy {
    /// The usual 512-bit budget: a 16-bit rank-32 branch.
    pub const DEFAULT_BUDGET: u32 = 512;

    pub fn new(budget_bits_per_channel: u32, lowrank_bits: u32) -> Self {
        Self { budget_bits_per_channel, lowrank_bits }
    }

    /// Policy whose value width is taken from the low-rank format.
    pub fn for_format(budget_bits_per_channel: u32, q2: &FormatSpec) -> Self {
        Self::new(budget_bits_per_channel, q2.bits_per_value())
    }
}

/// `floor(β / n)`.
pub fn rank_for_budget(policy: &BudgetPolicy) -> Result<usize> {
    if policy.lowrank_bits == 0 {
        return Err(Error::Budget("low-rank value width must be positive".into()));
    }
    let rank = (policy.budget_bits_per_channel / policy.lowrank_bits) as usize;
    if rank == 0 {
        return Err(Error::Budget(format!(
            "budget of {} bits/channel cannot hold one {}-bit value",
            policy.budget_bits_per_channel, policy.lowrank_bits
        )));
    }
    Ok(rank)
}

/// Bit accounting for a low-rank branch of shape `(d×ρ)·(ρ×n)`.
///
/// Payload bits per channel are `ρ × bits_per_value` and are compared against
/// the budget. Block-scale bits are reported separately and not charged to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub rank: usize,
    pub bits_per_value: u32,
    pub payload_bits_per_channel: u64,
    pub budget_bits_per_channel: Option<u32>,
    pub within_budget: bool,
    /// Scale bits for one row of `L` (`ceil(ρ / block) × scale bits`).
    pub scale_bits_per_channel: u64,
    /// Scale bits for the whole branch, both factors.
    pub total_scale_bits: u64,
    pub total_payload_bits: u64,
}

impl BudgetReport {
    pub fn new(rows: usize, cols: usize, rank: usize, q2: &FormatSpec, budget: Option<u32>) -> Self {
        let bits = q2.bits_per_value();
        let payload = rank as u64 * u64::from(bits);
        let scale_bits = u64::from(q2.scale_bits());
        let blocks = |len: usize| len.div_ceil(q2.block_size) as u64;
        let per_channel_scales = if scale_bits == 0 { 0 } else { blocks(rank) * scale_bits };
        let total_scales = if scale_bits == 0 {
            0
        } else {
            (rows as u64 * blocks(rank) + rank as u64 * blocks(cols)) * scale_bits
        };
        Self {
            rank,
            bits_per_value: bits,
            payload_bits_per_channel: payload,
            budget_bits_per_channel: budget,
            within_budget: budget.is_none_or(|b| payload <= u64::from(b)),
            scale_bits_per_channel: per_channel_scales,
            total_scale_bits: total_scales,
            total_payload_bits: (rows * rank + rank * cols) as u64 * u64::from(bits),
        }
    }
}
