use ndarray::{Array2, ArrayView2};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// One-sided amplitude spectrum, bins `0..=n/2`.
///
/// Interior bins are scaled by `2/n` and the DC/Nyquist bins by `1/n`, so a
/// bin-aligned sinusoid of amplitude `a` reads `a` at its bin.
pub fn amplitude_spectrum(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    (0..=half)
        .map(|k| {
            let scale = if k == 0 || (n % 2 == 0 && k == half) {
                1.0
            } else {
                2.0
            };
            buf[k].norm() * scale / n as f64
        })
        .collect()
}

/// Bin indices and frequencies (Hz) of an `n_samples` FFT lying in `[lo, hi]`.
pub fn fft_feature_bins(n_samples: usize, fs: f64, band: (f64, f64)) -> Vec<(usize, f64)> {
    let df = fs / n_samples as f64;
    (0..=n_samples / 2)
        .map(|k| (k, k as f64 * df))
        .filter(|&(_, f)| f >= band.0 - 1e-9 && f <= band.1 + 1e-9)
        .collect()
}

/// Per-channel amplitude spectrum restricted to `band`, shape `C × n_freq`.
pub fn fft_features(signal: ArrayView2<'_, f64>, fs: f64, band: (f64, f64)) -> Result<Array2<f64>> {
    let (c, s) = signal.dim();
    if (s as f64) < fs.round() {
        return Err(Error::Contract(format!(
            "FFT features need at least one second of data: {s} samples at {fs} Hz"
        )));
    }
    if !(band.0 < band.1 && band.1 <= fs / 2.0 && band.0 >= 0.0) {
        return Err(Error::config(
            "features.band",
            format!("band {:?} must satisfy 0 <= lo < hi <= fs/2", band),
        ));
    }
    let bins = fft_feature_bins(s, fs, band);
    let mut out = Array2::zeros((c, bins.len()));
    for (ch, row) in signal.outer_iter().enumerate() {
        let spec = amplitude_spectrum(&row.to_vec());
        for (j, &(k, _)) in bins.iter().enumerate() {
            out[[ch, j]] = spec[k];
        }
    }
    Ok(out)
}
