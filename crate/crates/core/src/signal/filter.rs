//! Butterworth band-pass design (bilinear transform, second-order sections)
//! and zero-phase forward-backward application.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};

const DEFAULT_ORDER: usize = 4;

/// One biquad `b0 + b1 z^-1 + b2 z^-2 / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Section {
    b: [f64; 3],
    a: [f64; 2],
}

impl Section {
    fn response(&self, z_inv: Complex<f64>) -> Complex<f64> {
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z_inv * z_inv;
        let den = 1.0 + self.a[0] * z_inv + self.a[1] * z_inv * z_inv;
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state that is at rest for a unit step.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }

    fn run(&self, data: &mut [f64], mut state: [f64; 2]) {
        for x in data.iter_mut() {
            let y = self.b[0] * *x + state[0];
            state[0] = self.b[1] * *x - self.a[0] * y + state[1];
            state[1] = self.b[2] * *x - self.a[1] * y;
            *x = y;
        }
    }
}

/// Digital Butterworth band-pass filter as a cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    sections: Vec<Section>,
}

impl Butterworth {
    /// Band-pass of prototype order `order` (`2 * order` poles).
    pub fn bandpass(order: usize, fs: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
            return Err(Error::config(
                "preprocess.bandpass",
                format!("band [{lo}, {hi}] Hz must satisfy 0 < lo < hi < fs/2 = {}", fs / 2.0),
            ));
        }
        if order == 0 {
            return Err(Error::config("preprocess.order", "order must be at least 1"));
        }
        let two_fs = 2.0 * fs;
        let wl = two_fs * (PI * lo / fs).tan();
        let wh = two_fs * (PI * hi / fs).tan();
        let bw = wh - wl;
        let w0_sq = wl * wh;

        // Analog band-pass poles from the low-pass prototype, mapped through
        // the bilinear transform; keep the upper-half-plane member of each
        // conjugate pair.
        let mut poles = Vec::with_capacity(order);
        for k in 1..=order {
            let theta = PI * (2 * k + order - 1) as f64 / (2 * order) as f64;
            let p = Complex::from_polar(1.0, theta);
            let a = p * (bw / 2.0);
            let d = (a * a - w0_sq).sqrt();
            for s in [a + d, a - d] {
                let z = (two_fs + s) / (two_fs - s);
                if z.im > 0.0 {
                    poles.push(z);
                }
            }
        }
        if poles.len() != order {
            return Err(Error::Numeric(format!(
                "band-pass design produced {} complex pole pairs, expected {order}",
                poles.len()
            )));
        }

        // Each section carries one zero at z = 1 and one at z = -1.
        let mut sections: Vec<Section> = poles
            .iter()
            .map(|p| Section {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * p.re, p.norm_sqr()],
            })
            .collect();

        // Unit gain at the digital image of the analog center frequency.
        let wc = 2.0 * (w0_sq.sqrt() / two_fs).atan();
        let z_inv = Complex::from_polar(1.0, -wc);
        let gain: f64 = sections.iter().map(|s| s.response(z_inv)).product::<Complex<f64>>().norm();
        for b in sections[0].b.iter_mut() {
            *b /= gain;
        }
        Ok(Butterworth { sections })
    }

    /// Magnitude response at `freq` Hz.
    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        let z_inv = Complex::from_polar(1.0, -2.0 * PI * freq / fs);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .product::<Complex<f64>>()
            .norm()
    }

    fn run_cascade(&self, data: &mut [f64]) {
        let mut level = data[0];
        for section in &self.sections {
            let rest = section.step_state();
            section.run(data, [rest[0] * level, rest[1] * level]);
            level *= section.dc_gain();
        }
    }

    fn pad_len(&self, n: usize) -> usize {
        (3 * (2 * self.sections.len() + 1)).min(n.saturating_sub(1))
    }

    /// Zero-phase filtering of one series (odd extension at both ends).
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad_len(n);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        self.run_cascade(&mut ext);
        ext.reverse();
        self.run_cascade(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Fourth-order zero-phase Butterworth band-pass applied per channel.
pub fn bandpass(signal: ArrayView2<'_, f64>, fs: f64, lo: f64, hi: f64) -> Result<Array2<f64>> {
    let filter = Butterworth::bandpass(DEFAULT_ORDER, fs, lo, hi)?;
    let (c, s) = signal.dim();
    let mut out = Array2::zeros((c, s));
    for (ch, row) in signal.outer_iter().enumerate() {
        let y = filter.filtfilt(&row.to_vec());
        out.row_mut(ch).assign(&ndarray::ArrayView1::from(&y));
    }
    Ok(out)
}
