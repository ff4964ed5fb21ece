//! The cross-modal transformer: EHR queries, note keys/values, one layer
//! and one head by default.

mod config;
mod forward;
mod params;

pub use config::{CrossModalConfig, Mode};
pub use forward::{
    build_cross_mask, causal_mask, forward, forward_graph, loss_and_grads, pool_for_task, pool_rows,
    predict, task_loss, AttentionRecord, ModelInput,
};
pub use params::{load_checkpoint, param_layout, save_checkpoint, CheckpointMeta, ModelParams};
