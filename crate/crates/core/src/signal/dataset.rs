//! Multi-subject epoched recordings and the little-endian `SSVP` container.
//!
//! Layout: magic `SSVP`, `u16` version, `u32` subjects, `u32` trials per
//! subject, `u32` channels, `u32` samples per trial, `u32` classes, `f32`
//! sampling rate, class frequencies and phases (`f32` each), channel names
//! (`u16` length + UTF-8), then every trial as a `u16` label followed by the
//! channel-major `f32` samples.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"SSVP";
const DATASET_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    /// `C × S_total`
    pub signal: Array2<f32>,
    pub label: u16,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Subject {
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochedDataset {
    pub subjects: Vec<Subject>,
    pub fs: f32,
    /// Stimulus frequency per class, Hz.
    pub frequencies: Vec<f32>,
    pub phases: Vec<f32>,
    pub channel_names: Vec<String>,
}

impl EpochedDataset {
    pub fn n_classes(&self) -> usize {
        self.frequencies.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    /// Samples per trial (0 for an empty dataset).
    pub fn trial_samples(&self) -> usize {
        self.subjects
            .iter()
            .flat_map(|s| s.trials.first())
            .map(|t| t.signal.ncols())
            .next()
            .unwrap_or(0)
    }

    pub fn trials_per_subject(&self) -> usize {
        self.subjects.first().map_or(0, |s| s.trials.len())
    }

    pub fn trial_seconds(&self) -> f64 {
        self.trial_samples() as f64 / self.fs as f64
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.n_channels();
        let m = self.n_classes();
        let s_total = self.trial_samples();
        let per_subject = self.trials_per_subject();
        if m == 0 {
            return Err(Error::Shape("dataset has no classes".into()));
        }
        if self.phases.len() != m {
            return Err(Error::Shape(format!(
                "{} phases for {m} classes",
                self.phases.len()
            )));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::Shape(format!("invalid sampling rate {}", self.fs)));
        }
        let top = self.frequencies.iter().cloned().fold(0.0f32, f32::max);
        if !(self.fs > 2.0 * top) {
            return Err(Error::Shape(format!(
                "sampling rate {} Hz below Nyquist for {top} Hz stimuli",
                self.fs
            )));
        }
        for (si, subject) in self.subjects.iter().enumerate() {
            if subject.trials.len() != per_subject {
                return Err(Error::Shape(format!(
                    "subject {si} has {} trials, expected {per_subject}",
                    subject.trials.len()
                )));
            }
            for (ti, trial) in subject.trials.iter().enumerate() {
                if trial.signal.dim() != (c, s_total) {
                    return Err(Error::Shape(format!(
                        "subject {si} trial {ti} is {:?}, expected ({c}, {s_total})",
                        trial.signal.dim()
                    )));
                }
                if trial.label as usize >= m {
                    return Err(Error::Shape(format!(
                        "subject {si} trial {ti} label {} >= {m} classes",
                        trial.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let c = self.n_channels();
        let s = self.trial_samples();
        let per_subject = self.trials_per_subject();
        let mut out = Vec::with_capacity(64 + self.subjects.len() * per_subject * (2 + 4 * c * s));
        out.extend_from_slice(&DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        for v in [self.subjects.len(), per_subject, c, s, self.n_classes()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.fs.to_le_bytes());
        for v in self.frequencies.iter().chain(&self.phases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for name in &self.channel_names {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| Error::Shape(format!("channel name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(bytes);
        }
        for subject in &self.subjects {
            for trial in &subject.trials {
                out.extend_from_slice(&trial.label.to_le_bytes());
                for v in trial.signal.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != DATASET_MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected \"SSVP\"")));
        }
        let version = r.u16("version")?;
        if version != DATASET_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let n_subjects = r.u32("n_subjects")? as usize;
        let per_subject = r.u32("trials_per_subject")? as usize;
        let c = r.u32("channels")? as usize;
        let s = r.u32("samples")? as usize;
        let m = r.u32("classes")? as usize;
        let fs = r.f32("fs")?;
        let frequencies = (0..m).map(|_| r.f32("frequencies")).collect::<Result<Vec<_>>>()?;
        let phases = (0..m).map(|_| r.f32("phases")).collect::<Result<Vec<_>>>()?;
        let mut channel_names = Vec::with_capacity(c);
        for _ in 0..c {
            let len = r.u16("channel name length")? as usize;
            let at = r.pos;
            let raw = r.take(len, "channel name")?;
            let name = std::str::from_utf8(raw)
                .map_err(|e| Error::format(at as u64, format!("channel name is not UTF-8: {e}")))?;
            channel_names.push(name.to_owned());
        }
        let trial_bytes = 2 + 4 * c * s;
        let needed = n_subjects
            .checked_mul(per_subject)
            .and_then(|n| n.checked_mul(trial_bytes));
        match needed {
            Some(n) if n <= r.remaining() => {}
            _ => {
                return Err(Error::format(
                    r.pos as u64,
                    format!(
                        "truncated payload: header declares {n_subjects} subjects x {per_subject} trials \
                         ({trial_bytes} bytes each) but only {} bytes remain",
                        r.remaining()
                    ),
                ))
            }
        }
        let mut subjects = Vec::with_capacity(n_subjects);
        for _ in 0..n_subjects {
            let mut trials = Vec::with_capacity(per_subject);
            for _ in 0..per_subject {
                let label = r.u16("label")?;
                let raw = r.take(4 * c * s, "samples")?;
                let data: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                let signal = Array2::from_shape_vec((c, s), data)
                    .map_err(|e| Error::format(r.pos as u64, e.to_string()))?;
                trials.push(Trial { signal, label });
            }
            subjects.push(Subject { trials });
        }
        if r.remaining() != 0 {
            return Err(Error::format(
                r.pos as u64,
                format!("{} trailing bytes after payload", r.remaining()),
            ));
        }
        let ds = EpochedDataset {
            subjects,
            fs,
            frequencies,
            phases,
            channel_names,
        };
        ds.validate()
            .map_err(|e| Error::format(r.pos as u64, format!("inconsistent dataset: {e}")))?;
        Ok(ds)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn write_dataset(ds: &EpochedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ds.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<EpochedDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EpochedDataset::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_dataset, SynthesisConfig};

    fn small() -> EpochedDataset {
        let mut cfg = SynthesisConfig::four_target(2, 1, 0.0, 9);
        cfg.duration = 0.5;
        generate_dataset(&cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = small();
        let bytes = ds.to_bytes().unwrap();
        let back = EpochedDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for (a, b) in ds.subjects.iter().zip(&back.subjects) {
            for (ta, tb) in a.trials.iter().zip(&b.trials) {
                assert_eq!(ta.label, tb.label);
                assert!(ta.signal.iter().zip(tb.signal.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        assert_eq!(ds, back);
    }

    #[test]
    fn header_fields() {
        let ds = small();
        let bytes = ds.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"SSVP");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        assert_eq!((u(6), u(10), u(14), u(18), u(22)), (2, 4, 8, 128, 4));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = small().to_bytes().unwrap();
        bytes[0] = b'X';
        let err = EpochedDataset::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = small().to_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(
            EpochedDataset::from_bytes(&bytes),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn missing_subject_is_truncation() {
        let mut ds = small();
        let mut bytes = ds.to_bytes().unwrap();
        // Declare one more subject than the payload carries.
        bytes[6..10].copy_from_slice(&3u32.to_le_bytes());
        let err = EpochedDataset::from_bytes(&bytes).unwrap_err();
        match err {
            Error::Format { message, .. } => assert!(message.contains("truncated"), "{message}"),
            other => panic!("unexpected {other}"),
        }
        ds.subjects.pop();
        let bytes = ds.to_bytes().unwrap();
        assert!(EpochedDataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = small().to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(
            EpochedDataset::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn invalid_labels_rejected() {
        let mut ds = small();
        ds.subjects[0].trials[0].label = 4;
        assert!(ds.to_bytes().is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ssvp");
        let ds = small();
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }
}
