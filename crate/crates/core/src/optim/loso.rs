//! Leave-one-subject-out cross-validation.

use serde::{Deserialize, Serialize};

use super::data::PreparedData;
use super::train::{train, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::network::ModelConfig;
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out_subject: usize,
    pub accuracy: f64,
    pub itr_bits_per_min: f64,
    pub confusion: Vec<Vec<u64>>,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct FoldRun {
    pub result: FoldResult,
    pub training: TrainOutcome,
    pub report: EvalReport,
}

/// Seed of fold `k`: the base seed xor the fold index.
pub fn fold_seed(base: u64, k: usize) -> u64 {
    base ^ k as u64
}

/// Seed of the fixed test windows of fold `k`, derived from the evaluation
/// base seed.
pub fn fold_eval_seed(eval_seed: u64, k: usize) -> u64 {
    rng::derive_seed(fold_seed(eval_seed, k), &[tag::EVAL])
}

/// Trains on every subject except `k` and evaluates on `k`.
pub fn run_fold(
    data: &PreparedData,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    eval_seed: u64,
    k: usize,
) -> Result<FoldRun> {
    let train_subjects: Vec<usize> = (0..data.n_subjects()).filter(|&s| s != k).collect();
    let fold_cfg = TrainConfig {
        seed: fold_seed(cfg.seed, k),
        ..cfg.clone()
    };
    let training = train(data, &train_subjects, model_cfg, &fold_cfg)?;
    let report = evaluate(
        &training.params,
        data,
        k,
        cfg.window_seconds,
        fold_eval_seed(eval_seed, k),
        cfg.test_windows_per_trial,
    )?;
    let result = FoldResult {
        held_out_subject: k,
        accuracy: report.accuracy,
        itr_bits_per_min: report.itr,
        confusion: report.confusion.clone(),
        epochs_run: training.epochs_run(),
    };
    Ok(FoldRun {
        result,
        training,
        report,
    })
}

/// One fold per subject, run on up to `jobs` threads. Results come back in
/// subject order regardless of scheduling.
pub fn loso_run(
    data: &PreparedData,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    eval_seed: u64,
    jobs: usize,
) -> Result<Vec<FoldRun>> {
    if data.n_subjects() < 2 {
        return Err(Error::config(
            "dataset",
            "leave-one-subject-out needs at least two subjects",
        ));
    }
    let folds: Vec<usize> = (0..data.n_subjects()).collect();
    if jobs <= 1 {
        return folds
            .iter()
            .map(|&k| run_fold(data, model_cfg, cfg, eval_seed, k))
            .collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    pool.install(|| {
        folds
            .par_iter()
            .map(|&k| run_fold(data, model_cfg, cfg, eval_seed, k))
            .collect()
    })
}
