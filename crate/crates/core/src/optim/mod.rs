//! Optimizer, learning-rate schedule, window sampling, the training loop and
//! leave-one-subject-out cross-validation.

mod adamw;
mod data;
mod loso;
mod sampler;
mod schedule;
mod train;

pub use adamw::{adamw_step, clip_global_norm, AdamWConfig, OptimizerState};
pub use data::{PreparedData, Preprocess, WindowRef};
pub use loso::{fold_eval_seed, fold_seed, loso_run, run_fold, FoldResult, FoldRun};
pub use sampler::{epoch_batches, WindowSampler};
pub use schedule::{effective_lr, lr_at_epoch};
pub use train::{trace_csv, train, EpochTrace, TrainConfig, TrainOutcome};
