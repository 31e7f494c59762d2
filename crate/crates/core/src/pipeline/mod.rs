//! Per-layer orchestration: rank selection, smoothing, absorption, rotation,
//! dual quantization, reconstruction and error reporting.

mod batch;
mod budget;
mod layer;
mod report;

pub use batch::{ablate, assemble_batch, AblationCell, AblationGrid, BatchItem};
pub use budget::{rank_for_budget, BudgetPolicy, BudgetReport};
pub use layer::{
    assemble_layer, forward, reconstruct_original, reconstruct_weight, rtn_matmul_error, rtn_weight, LayerBundle, LayerMeta, LayerOptions,
    SmoothingInput, SmoothingMeta, StageMeta, DEFAULT_SMOOTHING_RANK,
};
pub use report::{error_report, weight_report, ErrorReport, WeightReport, BOUND_SLACK};
