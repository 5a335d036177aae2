use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_samples: usize,
    pub start: usize,
}

impl WindowSpec {
    pub fn new(window_samples: usize, start: usize) -> Self {
        WindowSpec {
            window_samples,
            start,
        }
    }

    /// Largest valid start for a trial of `total` samples.
    pub fn max_start(window_samples: usize, total: usize) -> Option<usize> {
        total.checked_sub(window_samples)
    }
}

/// Copies samples `[start, start + window_samples)` of every channel.
pub fn extract_window<T: Clone>(trial: ArrayView2<'_, T>, spec: WindowSpec) -> Result<Array2<T>> {
    let total = trial.ncols();
    let end = spec.start.checked_add(spec.window_samples);
    match end {
        Some(end) if spec.window_samples > 0 && end <= total => {
            Ok(trial.slice(s![.., spec.start..end]).to_owned())
        }
        _ => Err(Error::Index {
            name: "window.start",
            index: spec.start,
            limit: total.saturating_sub(spec.window_samples),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Array2<f64> {
        Array2::from_shape_fn((2, 1024), |(c, t)| (c * 10_000 + t) as f64)
    }

    #[test]
    fn window_bounds() {
        let trial = ramp();
        let w = extract_window(trial.view(), WindowSpec::new(256, 0)).unwrap();
        assert_eq!(w.dim(), (2, 256));
        assert_eq!(w[[0, 0]], 0.0);
        assert_eq!(w[[1, 255]], 10_255.0);

        let w = extract_window(trial.view(), WindowSpec::new(256, 768)).unwrap();
        assert_eq!(w[[0, 0]], 768.0);
        assert_eq!(w[[0, 255]], 1023.0);

        let err = extract_window(trial.view(), WindowSpec::new(256, 769)).unwrap_err();
        assert!(matches!(err, Error::Index { .. }));
        assert_eq!(WindowSpec::max_start(256, 1024), Some(768));
    }
}
