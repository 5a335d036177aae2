//! Trial preprocessing and window-to-feature conversion.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::FeatureMode;
use crate::signal::{bandpass, fft_feature_bins, fft_features, EpochedDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    /// Zero-phase band-pass applied to whole trials before windowing, Hz.
    pub bandpass: Option<(f64, f64)>,
    /// Frequency range kept in FFT feature mode, Hz.
    pub fft_band: (f64, f64),
    /// Rescale each window channel to zero mean and unit variance.
    pub standardize: bool,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            bandpass: None,
            fft_band: (8.0, 64.0),
            standardize: false,
        }
    }
}

/// A dataset converted to `f64` and filtered, ready for window sampling.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// `subjects[s][t]` is a `C × S_total` trial with its label.
    pub subjects: Vec<Vec<(Array2<f64>, usize)>>,
    pub fs: f64,
    pub n_classes: usize,
    pub n_channels: usize,
    pub trial_samples: usize,
    pub preprocess: Preprocess,
}

impl PreparedData {
    pub fn new(ds: &EpochedDataset, preprocess: Preprocess) -> Result<Self> {
        ds.validate()?;
        let fs = ds.fs as f64;
        let subjects = ds
            .subjects
            .iter()
            .map(|subj| {
                subj.trials
                    .iter()
                    .map(|t| {
                        let x = t.signal.mapv(|v| v as f64);
                        let x = match preprocess.bandpass {
                            Some((lo, hi)) => bandpass(x.view(), fs, lo, hi)?,
                            None => x,
                        };
                        Ok((x, t.label as usize))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedData {
            subjects,
            fs,
            n_classes: ds.n_classes(),
            n_channels: ds.n_channels(),
            trial_samples: ds.trial_samples(),
            preprocess,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Window length in samples; the product with `fs` must be integral and
    /// fit inside a trial.
    pub fn window_samples(&self, seconds: f64) -> Result<usize> {
        let exact = seconds * self.fs;
        let n = exact.round();
        if !(seconds > 0.0) || (exact - n).abs() > 1e-6 || n < 1.0 {
            return Err(Error::config(
                "train.window_seconds",
                format!("{seconds} s at {} Hz is not a whole number of samples", self.fs),
            ));
        }
        let n = n as usize;
        if n > self.trial_samples {
            return Err(Error::config(
                "train.window_seconds",
                format!(
                    "window of {n} samples is longer than the {}-sample trials",
                    self.trial_samples
                ),
            ));
        }
        Ok(n)
    }

    /// Width of the model input for a window of `window` samples.
    pub fn feature_len(&self, mode: FeatureMode, window: usize) -> usize {
        match mode {
            FeatureMode::TimeDomain => window,
            FeatureMode::Fft => fft_feature_bins(window, self.fs, self.preprocess.fft_band).len(),
        }
    }

    /// Model input for one window, `C × feature_len`.
    pub fn features(
        &self,
        subject: usize,
        trial: usize,
        start: usize,
        window: usize,
        mode: FeatureMode,
    ) -> Result<Array2<f64>> {
        let trials = self.subjects.get(subject).ok_or(Error::Index {
            name: "subject",
            index: subject,
            limit: self.subjects.len(),
        })?;
        let (x, _) = trials.get(trial).ok_or(Error::Index {
            name: "trial",
            index: trial,
            limit: trials.len(),
        })?;
        if start + window > x.ncols() {
            return Err(Error::Index {
                name: "window start",
                index: start,
                limit: x.ncols().saturating_sub(window) + 1,
            });
        }
        let mut w = x.slice(s![.., start..start + window]).to_owned();
        if self.preprocess.standardize {
            for mut row in w.outer_iter_mut() {
                let mean = row.mean().unwrap_or(0.0);
                let sd = row.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0).sqrt();
                let scale = if sd > 0.0 { 1.0 / sd } else { 0.0 };
                row.mapv_inplace(|v| (v - mean) * scale);
            }
        }
        match mode {
            FeatureMode::TimeDomain => Ok(w),
            FeatureMode::Fft => fft_features(w.view(), self.fs, self.preprocess.fft_band),
        }
    }

    pub fn label(&self, subject: usize, trial: usize) -> usize {
        self.subjects[subject][trial].1
    }

    /// Stacks the feature matrices of several windows into `B × C × F`.
    pub fn batch(
        &self,
        refs: &[WindowRef],
        window: usize,
        mode: FeatureMode,
    ) -> Result<(Array3<f64>, Vec<usize>)> {
        let f = self.feature_len(mode, window);
        let mut x = Array3::zeros((refs.len(), self.n_channels, f));
        let mut labels = Vec::with_capacity(refs.len());
        for (i, r) in refs.iter().enumerate() {
            let feat = self.features(r.subject, r.trial, r.start, window, mode)?;
            x.slice_mut(s![i, .., ..]).assign(&feat);
            labels.push(self.label(r.subject, r.trial));
        }
        Ok((x, labels))
    }
}

/// Provenance of one sampled window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowRef {
    pub subject: usize,
    pub trial: usize,
    pub start: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SynthesisConfig;

    fn data(pre: Preprocess) -> PreparedData {
        let cfg = SynthesisConfig::four_target(2, 1, 0.0, 5);
        PreparedData::new(&crate::signal::generate_dataset(&cfg).unwrap(), pre).unwrap()
    }

    #[test]
    fn window_lengths() {
        let d = data(Preprocess::default());
        assert_eq!(d.window_samples(1.0).unwrap(), 256);
        assert_eq!(d.window_samples(4.0).unwrap(), 1024);
        assert!(matches!(d.window_samples(4.5), Err(Error::Config { .. })));
        assert!(d.window_samples(0.001).is_err());
    }

    #[test]
    fn fft_feature_width() {
        let d = data(Preprocess::default());
        assert_eq!(d.feature_len(FeatureMode::Fft, 256), 57);
        let f = d.features(0, 0, 0, 256, FeatureMode::Fft).unwrap();
        assert_eq!(f.dim(), (8, 57));
    }

    #[test]
    fn standardized_rows() {
        let d = data(Preprocess {
            standardize: true,
            ..Default::default()
        });
        let f = d.features(1, 2, 100, 256, FeatureMode::TimeDomain).unwrap();
        for row in f.outer_iter() {
            assert!(row.mean().unwrap().abs() < 1e-12);
            assert!((row.mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_window() {
        let d = data(Preprocess::default());
        assert!(matches!(
            d.features(0, 0, 769, 256, FeatureMode::TimeDomain),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            d.features(2, 0, 0, 256, FeatureMode::TimeDomain),
            Err(Error::Index { name: "subject", .. })
        ));
    }
}
