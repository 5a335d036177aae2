//! Uniform random-window sampling over a pool of training trials.

use rand::Rng;

use super::data::{PreparedData, WindowRef};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct WindowSampler {
    pool: Vec<(usize, usize)>,
    max_start: usize,
}

impl WindowSampler {
    /// Pools every trial of `subjects`. Fails when no window of `window`
    /// samples fits inside a trial.
    pub fn new(data: &PreparedData, subjects: &[usize], window: usize) -> Result<Self> {
        if window == 0 || window > data.trial_samples {
            return Err(Error::config(
                "train.window_seconds",
                format!(
                    "window of {window} samples does not fit {}-sample trials",
                    data.trial_samples
                ),
            ));
        }
        let mut pool = Vec::new();
        for &s in subjects {
            let trials = data.subjects.get(s).ok_or(Error::Index {
                name: "subject",
                index: s,
                limit: data.n_subjects(),
            })?;
            pool.extend((0..trials.len()).map(|t| (s, t)));
        }
        if pool.is_empty() {
            return Err(Error::config("train", "training pool has no trials"));
        }
        Ok(WindowSampler {
            pool,
            max_start: data.trial_samples - window,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WindowRef {
        let (subject, trial) = self.pool[rng.random_range(0..self.pool.len())];
        WindowRef {
            subject,
            trial,
            start: rng.random_range(0..=self.max_start),
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<WindowRef> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    pub fn max_start(&self) -> usize {
        self.max_start
    }
}

/// Batch sizes of one epoch: full batches plus a final short one.
pub fn epoch_batches(windows_per_epoch: usize, batch_size: usize) -> Vec<usize> {
    let full = windows_per_epoch / batch_size;
    let mut sizes = vec![batch_size; full];
    let rest = windows_per_epoch % batch_size;
    if rest > 0 {
        sizes.push(rest);
    }
    sizes
}
