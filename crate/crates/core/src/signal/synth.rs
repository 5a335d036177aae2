//! Synthetic SSVEP EEG: harmonic responses at the stimulus frequency, mixed
//! into channels by a per-subject matrix, plus noise at a fixed SNR.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::dataset::{EpochedDataset, Subject, Trial};
use super::stimulus::StimulusConfig;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// How one subject's cortex projects the harmonic sources onto electrodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectModel {
    /// `C × (n_harmonics · n_sources)`; column `k * n_sources + j` carries
    /// source `j` of harmonic `k`.
    pub mixing: Array2<f64>,
    /// Per-harmonic phase offset specific to this subject, radians.
    pub phase_jitter: Vec<f64>,
    /// `f64::INFINITY` disables noise.
    pub noise_snr_db: f64,
    pub pink_noise: bool,
    pub rng_seed: u64,
}

impl SubjectModel {
    /// Standard-normal mixing with unit-norm rows and phase jitter drawn
    /// from `[-π/4, π/4]`.
    pub fn random(
        n_channels: usize,
        n_harmonics: usize,
        n_sources: usize,
        noise_snr_db: f64,
        seed: u64,
    ) -> Self {
        let mut r = rng::stream(seed, &[tag::SUBJECT]);
        let cols = n_harmonics * n_sources;
        let mut mixing: Array2<f64> = Array2::from_shape_fn((n_channels, cols), |_| StandardNormal.sample(&mut r));
        for mut row in mixing.outer_iter_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
        let phase_jitter = (0..n_harmonics)
            .map(|_| r.random_range(-PI / 4.0..=PI / 4.0))
            .collect();
        SubjectModel {
            mixing,
            phase_jitter,
            noise_snr_db,
            pink_noise: false,
            rng_seed: seed,
        }
    }

    /// Identity-like mixing without jitter: channel `c` sees source 0 of
    /// every harmonic.
    pub fn ideal(n_channels: usize, n_harmonics: usize, noise_snr_db: f64, seed: u64) -> Self {
        let mut mixing = Array2::zeros((n_channels, n_harmonics));
        mixing.fill(1.0);
        SubjectModel {
            mixing,
            phase_jitter: vec![0.0; n_harmonics],
            noise_snr_db,
            pink_noise: false,
            rng_seed: seed,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.mixing.nrows()
    }

    fn validate(&self, n_harmonics: usize) -> Result<usize> {
        let cols = self.mixing.ncols();
        if cols == 0 || cols % n_harmonics != 0 {
            return Err(Error::config(
                "subject.mixing",
                format!("{cols} columns is not a multiple of {n_harmonics} harmonics"),
            ));
        }
        if self.phase_jitter.len() != n_harmonics {
            return Err(Error::config("subject.phase_jitter", "one entry per harmonic"));
        }
        for (c, row) in self.mixing.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("subject.mixing[{c}]"), "non-finite entry"));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::config(format!("subject.mixing[{c}]"), "all-zero row"));
            }
        }
        if self.noise_snr_db.is_nan() || self.noise_snr_db == f64::NEG_INFINITY {
            return Err(Error::config("subject.noise_snr_db", "must be finite or +inf"));
        }
        Ok(cols / n_harmonics)
    }
}

fn sample_count(fs: f64, duration: f64) -> Result<usize> {
    let n = fs * duration;
    let rounded = n.round();
    if !(rounded >= 1.0) || (n - rounded).abs() > 1e-6 {
        return Err(Error::config(
            "duration",
            format!("duration {duration} s at {fs} Hz is not a positive whole number of samples"),
        ));
    }
    Ok(rounded as usize)
}

/// Unit-variance 1/f noise by spectral shaping of white noise.
fn pink_series<R: Rng>(n: usize, r: &mut R) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(r), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let m = k.min(n - k);
        *v = if m == 0 { Complex::new(0.0, 0.0) } else { *v / (m as f64).sqrt() };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let p = out.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if p > 0.0 {
        out.iter().map(|v| v / p.sqrt()).collect()
    } else {
        out
    }
}

/// One trial, shape `C × round(fs · duration)`, deterministic in
/// `(subject.rng_seed, class_idx, trial_index)`.
pub fn synthesize_trial(
    cfg: &StimulusConfig,
    subject: &SubjectModel,
    class_idx: usize,
    trial_index: u64,
    fs: f64,
    duration: f64,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    cfg.check_sampling_rate(fs)?;
    if class_idx >= cfg.n_classes() {
        return Err(Error::Index {
            name: "class_idx",
            index: class_idx,
            limit: cfg.n_classes(),
        });
    }
    let n_sources = subject.validate(cfg.n_harmonics)?;
    let n = sample_count(fs, duration)?;
    let f = cfg.frequencies[class_idx];
    let phi = cfg.phases[class_idx];

    // sources: (n_harmonics · n_sources) × n
    let mut sources = Array2::zeros((cfg.n_harmonics * n_sources, n));
    for k in 0..cfg.n_harmonics {
        let h = (k + 1) as f64;
        let amp = cfg.harmonic_amplitudes[k];
        let base = h * phi + cfg.harmonic_phases[k] + subject.phase_jitter[k];
        for j in 0..n_sources {
            let offset = base + j as f64 * PI / n_sources as f64;
            let mut row = sources.row_mut(k * n_sources + j);
            for (t, v) in row.iter_mut().enumerate() {
                *v = amp * (2.0 * PI * h * f * t as f64 / fs + offset).sin();
            }
        }
    }
    let mut signal = subject.mixing.dot(&sources);

    if subject.noise_snr_db.is_finite() {
        let mut r = rng::stream(subject.rng_seed, &[tag::TRIAL, class_idx as u64, trial_index]);
        let ratio = 10f64.powf(subject.noise_snr_db / 10.0);
        for mut row in signal.outer_iter_mut() {
            let mut noise: Array1<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
            if subject.pink_noise {
                noise += &Array1::from(pink_series(n, &mut r));
            }
            let p_signal = row.dot(&row) / n as f64;
            let p_noise = noise.dot(&noise) / n as f64;
            if p_noise > 0.0 {
                let scale = (p_signal / (ratio * p_noise)).sqrt();
                row.scaled_add(scale, &noise);
            }
        }
    }
    Ok(signal)
}

/// Parameters for a synthetic multi-subject recording session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub stimulus: StimulusConfig,
    pub n_subjects: usize,
    /// Repetitions of each class per subject.
    pub trials_per_class: usize,
    pub n_channels: usize,
    pub fs: f64,
    /// Trial length, seconds.
    pub duration: f64,
    /// `"inf"` in JSON disables noise.
    #[serde(with = "snr_json")]
    pub snr_db: f64,
    #[serde(default = "default_sources")]
    pub n_sources: usize,
    #[serde(default)]
    pub pink_noise: bool,
    pub seed: u64,
}

fn default_sources() -> usize {
    2
}

/// JSON has no infinity literal, so the noise-free setting is spelled `"inf"`.
mod snr_json {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "+inf" | "infinity") => Ok(f64::INFINITY),
            Raw::Text(t) => Err(de::Error::custom(format!("invalid SNR `{t}`"))),
        }
    }
}

impl SynthesisConfig {
    /// Twelve targets, 8 channels at 256 Hz, 4 s trials.
    pub fn twelve_target(n_subjects: usize, trials_per_class: usize, seed: u64) -> Self {
        SynthesisConfig {
            stimulus: StimulusConfig::twelve_target(),
            n_subjects,
            trials_per_class,
            n_channels: 8,
            fs: 256.0,
            duration: 4.0,
            snr_db: 0.0,
            n_sources: 2,
            pink_noise: false,
            seed,
        }
    }

    /// Four targets at 10/11/12/13 Hz with three harmonics.
    pub fn four_target(n_subjects: usize, trials_per_class: usize, snr_db: f64, seed: u64) -> Self {
        let stimulus = StimulusConfig::with_targets(
            vec![10.0, 11.0, 12.0, 13.0],
            vec![0.0, 0.5 * PI, PI, 1.5 * PI],
            vec![1.0, 0.5, 0.25],
        );
        SynthesisConfig {
            stimulus,
            n_subjects,
            trials_per_class,
            n_channels: 8,
            fs: 256.0,
            duration: 4.0,
            snr_db,
            n_sources: 2,
            pink_noise: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scoped = |e: Error| match e {
            Error::Config { field, message } => Error::Config {
                field: format!("synthesis.{field}"),
                message,
            },
            other => other,
        };
        self.stimulus.validate().map_err(scoped)?;
        self.stimulus.check_sampling_rate(self.fs).map_err(scoped)?;
        if self.n_subjects == 0 {
            return Err(Error::config("synthesis.n_subjects", "must be at least 1"));
        }
        if self.trials_per_class == 0 {
            return Err(Error::config("synthesis.trials_per_class", "must be at least 1"));
        }
        if self.n_channels == 0 {
            return Err(Error::config("synthesis.n_channels", "must be at least 1"));
        }
        if self.n_sources == 0 {
            return Err(Error::config("synthesis.n_sources", "must be at least 1"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::config("synthesis.snr_db", "must be finite or +inf"));
        }
        if self.stimulus.n_classes() > u16::MAX as usize {
            return Err(Error::config("synthesis.stimulus.frequencies", "too many classes"));
        }
        sample_count(self.fs, self.duration).map_err(|_| {
            Error::config(
                "synthesis.duration",
                "duration times fs must be a positive whole number of samples",
            )
        })?;
        Ok(())
    }

    pub fn subject_model(&self, subject: usize) -> SubjectModel {
        let mut m = SubjectModel::random(
            self.n_channels,
            self.stimulus.n_harmonics,
            self.n_sources,
            self.snr_db,
            rng::derive_seed(self.seed, &[tag::SUBJECT, subject as u64]),
        );
        m.pink_noise = self.pink_noise;
        m
    }
}

pub fn default_channel_names(n: usize) -> Vec<String> {
    const OCCIPITAL: [&str; 8] = ["PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2"];
    if n == OCCIPITAL.len() {
        OCCIPITAL.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|i| format!("Ch{i}")).collect()
    }
}

/// Synthesizes every subject; trials cycle through the classes in order.
pub fn generate_dataset(cfg: &SynthesisConfig) -> Result<EpochedDataset> {
    cfg.validate()?;
    let m = cfg.stimulus.n_classes();
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    for s in 0..cfg.n_subjects {
        let model = cfg.subject_model(s);
        let mut trials = Vec::with_capacity(cfg.trials_per_class * m);
        for rep in 0..cfg.trials_per_class {
            for class in 0..m {
                let x = synthesize_trial(&cfg.stimulus, &model, class, rep as u64, cfg.fs, cfg.duration)?;
                trials.push(Trial {
                    signal: x.mapv(|v| v as f32),
                    label: class as u16,
                });
            }
        }
        subjects.push(Subject { trials });
    }
    let ds = EpochedDataset {
        subjects,
        fs: cfg.fs as f32,
        frequencies: cfg.stimulus.frequencies.iter().map(|&f| f as f32).collect(),
        phases: cfg.stimulus.phases.iter().map(|&p| p as f32).collect(),
        channel_names: default_channel_names(cfg.n_channels),
    };
    ds.validate()?;
    Ok(ds)
}
