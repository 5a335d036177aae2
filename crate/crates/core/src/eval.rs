//! Accuracy, information transfer rate and confusion statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::optim::{PreparedData, WindowRef};
use crate::rng;

/// Seconds added to the window length for the gaze shift between selections.
pub const GAZE_SHIFT_SECONDS: f64 = 0.5;

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Contract("accuracy of an empty prediction set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

fn xlog2x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Wolpaw information transfer rate in bits per minute for accuracy `p`
/// over `n` targets with `t` seconds per selection. Values below chance are
/// negative and returned as is.
pub fn itr(p: f64, n: usize, t: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Contract(format!("ITR needs at least 2 classes, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Contract(format!("accuracy {p} outside [0, 1]")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Contract(format!("selection time {t} must be positive")));
    }
    let n = n as f64;
    let q = 1.0 - p;
    // (1-P)·log2((1-P)/(N-1)) = xlog2x(1-P) - (1-P)·log2(N-1)
    let bits = n.log2() + xlog2x(p) + xlog2x(q) - q * (n - 1.0).log2();
    Ok(60.0 / t * bits)
}

/// One evaluated window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub trial: usize,
    pub start: usize,
    pub label: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n_classes: usize,
    pub window_seconds: f64,
    pub t_selection: f64,
    pub itr: f64,
    pub itr_clamped: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
    pub n_windows: usize,
    pub windows: Vec<WindowPrediction>,
}

impl EvalReport {
    pub fn from_predictions(
        n_classes: usize,
        window_seconds: f64,
        windows: Vec<WindowPrediction>,
    ) -> Result<Self> {
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for w in &windows {
            if w.label >= n_classes || w.predicted >= n_classes {
                return Err(Error::Index {
                    name: "class",
                    index: w.label.max(w.predicted),
                    limit: n_classes,
                });
            }
            confusion[w.label][w.predicted] += 1;
        }
        let preds: Vec<usize> = windows.iter().map(|w| w.predicted).collect();
        let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
        let acc = accuracy(&preds, &labels)?;
        let t_selection = window_seconds + GAZE_SHIFT_SECONDS;
        let raw = itr(acc, n_classes, t_selection)?;
        Ok(EvalReport {
            accuracy: acc,
            n_classes,
            window_seconds,
            t_selection,
            itr: raw,
            itr_clamped: raw.max(0.0),
            confusion,
            n_windows: windows.len(),
            windows,
        })
    }
}

/// Fixed test windows: `per_trial` uniform starts for every trial of
/// `subject`, drawn from a stream seeded by `seed`.
pub fn eval_windows(
    data: &PreparedData,
    subject: usize,
    window: usize,
    seed: u64,
    per_trial: usize,
) -> Result<Vec<WindowRef>> {
    let trials = data.subjects.get(subject).ok_or(Error::Index {
        name: "subject",
        index: subject,
        limit: data.n_subjects(),
    })?;
    if window > data.trial_samples {
        return Err(Error::config(
            "eval.window_seconds",
            format!("window of {window} samples exceeds the trial length"),
        ));
    }
    let max_start = data.trial_samples - window;
    let mut r = rng::stream(seed, &[subject as u64]);
    let mut out = Vec::with_capacity(trials.len() * per_trial);
    for trial in 0..trials.len() {
        for _ in 0..per_trial {
            out.push(WindowRef {
                subject,
                trial,
                start: r.random_range(0..=max_start),
            });
        }
    }
    Ok(out)
}

const EVAL_CHUNK: usize = 256;

/// Classifies the fixed test windows of one subject.
pub fn evaluate(
    model: &ModelParams,
    data: &PreparedData,
    subject: usize,
    window_seconds: f64,
    seed: u64,
    per_trial: usize,
) -> Result<EvalReport> {
    let window = data.window_samples(window_seconds)?;
    let mode = model.config.feature_mode;
    model
        .config
        .check_input(data.n_channels, data.feature_len(mode, window))?;
    if model.config.classes != data.n_classes {
        return Err(Error::Shape(format!(
            "model has {} classes, dataset has {}",
            model.config.classes, data.n_classes
        )));
    }
    let refs = eval_windows(data, subject, window, seed, per_trial)?;
    let mut windows = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(EVAL_CHUNK) {
        let (x, labels) = data.batch(chunk, window, mode)?;
        let preds = model.predict(x.view())?;
        for ((r, label), predicted) in chunk.iter().zip(labels).zip(preds) {
            windows.push(WindowPrediction {
                trial: r.trial,
                start: r.start,
                label,
                predicted,
            });
        }
    }
    EvalReport::from_predictions(data.n_classes, window_seconds, windows)
}
