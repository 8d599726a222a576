//! Losses, optimizer, learning-rate schedule and the training loop.

pub mod loss;
pub mod optim;
pub mod trainer;

pub use loss::{
    loss_ce, loss_ce_grad, loss_overlap, loss_weight, predict, total_loss, LossBreakdown, Overlap,
};
pub use optim::{
    adam_step, adam_update, clip_grad_norm, cosine_lr, project_nonnegative, AdamConfig, AdamState,
};
pub use trainer::{train, write_history_csv, EpochRecord, TrainConfig, TrainOutcome};
