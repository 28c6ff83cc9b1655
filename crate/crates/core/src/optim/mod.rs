//! Adam, the step-decay schedule, the three training modes and checkpoint
//! selection.

mod adam;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use train::{
    batch_gradients, fuse_sum_pool, learning_rate_at, select_checkpoint, train, CheckpointMeta,
    EpochSummary, LogRecord, TrainConfig, TrainData, TrainMode, TrainOutcome,
};
