use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flicker stimulus table plus the harmonic response model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusConfig {
    /// Stimulus frequency per class, Hz.
    pub frequencies: Vec<f64>,
    /// Stimulus phase offset per class, radians.
    pub phases: Vec<f64>,
    pub n_harmonics: usize,
    pub harmonic_amplitudes: Vec<f64>,
    /// Response phase per harmonic, radians.
    pub harmonic_phases: Vec<f64>,
}

impl StimulusConfig {
    /// Twelve targets from 9.25 Hz to 14.75 Hz in 0.5 Hz steps, phases in
    /// 0.5π increments, three harmonics with halving amplitudes.
    pub fn twelve_target() -> Self {
        let frequencies: Vec<f64> = (0..12).map(|i| 9.25 + 0.5 * i as f64).collect();
        let phases = (0..12).map(|i| (0.5 * PI * i as f64) % (2.0 * PI)).collect();
        Self::with_targets(frequencies, phases, vec![1.0, 0.5, 0.25])
    }

    pub fn with_targets(frequencies: Vec<f64>, phases: Vec<f64>, amplitudes: Vec<f64>) -> Self {
        let n = amplitudes.len();
        StimulusConfig {
            frequencies,
            phases,
            n_harmonics: n,
            harmonic_amplitudes: amplitudes,
            harmonic_phases: vec![0.0; n],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.frequencies.len()
    }

    pub fn max_modeled_frequency(&self) -> f64 {
        self.frequencies.iter().cloned().fold(0.0, f64::max) * self.n_harmonics as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies.is_empty() {
            return Err(Error::config("stimulus.frequencies", "at least one class required"));
        }
        for (i, &f) in self.frequencies.iter().enumerate() {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::config(
                    format!("stimulus.frequencies[{i}]"),
                    format!("must be positive, got {f}"),
                ));
            }
            if self.frequencies[..i].contains(&f) {
                return Err(Error::config(
                    format!("stimulus.frequencies[{i}]"),
                    format!("duplicate frequency {f}"),
                ));
            }
        }
        if self.phases.len() != self.frequencies.len() {
            return Err(Error::config(
                "stimulus.phases",
                format!(
                    "expected {} phases, got {}",
                    self.frequencies.len(),
                    self.phases.len()
                ),
            ));
        }
        if self.n_harmonics == 0 {
            return Err(Error::config("stimulus.n_harmonics", "must be at least 1"));
        }
        if self.harmonic_amplitudes.len() != self.n_harmonics {
            return Err(Error::config(
                "stimulus.harmonic_amplitudes",
                format!("expected {} entries", self.n_harmonics),
            ));
        }
        if self.harmonic_phases.len() != self.n_harmonics {
            return Err(Error::config(
                "stimulus.harmonic_phases",
                format!("expected {} entries", self.n_harmonics),
            ));
        }
        if self.harmonic_amplitudes.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::config(
                "stimulus.harmonic_amplitudes",
                "amplitudes must be nonnegative",
            ));
        }
        if !(self.harmonic_amplitudes[0] > 0.0) {
            return Err(Error::config(
                "stimulus.harmonic_amplitudes[0]",
                "fundamental amplitude must be positive",
            ));
        }
        Ok(())
    }

    /// Nyquist check for every modeled harmonic.
    pub fn check_sampling_rate(&self, fs: f64) -> Result<()> {
        let top = self.max_modeled_frequency();
        if !(fs > 2.0 * top) {
            return Err(Error::config(
                "fs",
                format!("sampling rate {fs} Hz must exceed twice the highest harmonic ({top} Hz)"),
            ));
        }
        Ok(())
    }
}

/// RGB chrominance of the flicker for `class_idx` at time `t` seconds.
pub fn stimulus_chrominance(cfg: &StimulusConfig, class_idx: usize, t: f64) -> Result<[f64; 3]> {
    let m = cfg.n_classes();
    if class_idx >= m {
        return Err(Error::Index {
            name: "class_idx",
            index: class_idx,
            limit: m,
        });
    }
    if !(t >= 0.0) {
        return Err(Error::Contract(format!("time must be nonnegative, got {t}")));
    }
    let f = cfg.frequencies[class_idx];
    let phi = cfg.phases[class_idx];
    let v = 255.0 * (1.0 + (2.0 * PI * f * t + phi).sin()) / 2.0;
    Ok([v; 3])
}
