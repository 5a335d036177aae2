//! Input recovery through linear layers, rule-center reconstruction and
//! firing-strength analysis.

use faer::Mat;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzzy::{FuzzyFilter, LinearMap};
use crate::network::{argmax, FeatureMode, ModelParams};
use crate::signal::amplitude_spectrum;


#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInverseResult {
    /// `D_in × D_out`
    pub pinv: Array2<f64>,
    pub rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
}

/// Moore-Penrose pseudoinverse via SVD. Singular values below
/// `ε · max(m, n) · σ_max` are treated as zero.
pub fn pinv(w: ArrayView2<'_, f64>) -> Result<PseudoInverseResult> {
    let (m, n) = w.dim();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("pseudoinverse of a non-finite matrix".into()));
    }
    if m == 0 || n == 0 {
        return Ok(PseudoInverseResult {
            pinv: Array2::zeros((n, m)),
            rank: 0,
            singular_values: Vec::new(),
        });
    }
    let a = Mat::<f64>::from_fn(m, n, |i, j| w[[i, j]]);
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let sv: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let s_max = sv.iter().copied().fold(0.0, f64::max);
    let tol = f64::EPSILON * m.max(n) as f64 * s_max;
    let mut out = Array2::zeros((n, m));
    let mut rank = 0;
    for (k, &s) in sv.iter().enumerate() {
        if s <= tol {
            continue;
        }
        rank += 1;
        let inv = 1.0 / s;
        for i in 0..n {
            let vi = v[(i, k)] * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..m {
                out[[i, j]] += vi * u[(j, k)];
            }
        }
    }
    let mut singular_values = sv;
    singular_values.sort_by(|a, b| b.total_cmp(a));
    Ok(PseudoInverseResult {
        pinv: out,
        rank,
        singular_values,
    })
}

/// `x̂ = W⁺ (y − b)`: exact for invertible `W`, minimum-norm least squares
/// otherwise.
pub fn recover_input(layer: &LinearMap, y: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if y.len() != layer.out_dim() {
        return Err(Error::Shape(format!(
            "layer output width {} but got {} values",
            layer.out_dim(),
            y.len()
        )));
    }
    let p = pinv(layer.weight.view())?;
    Ok(p.pinv.dot(&(&y - &layer.bias)))
}

/// Rule centers mapped back from query space to token space, `R × D`.
pub fn recover_centers(filter: &FuzzyFilter) -> Result<Array2<f64>> {
    let q = &filter.query;
    if q.weight.nrows() != q.weight.ncols() {
        return Err(Error::Shape("query map must be square".into()));
    }
    let p = pinv(q.weight.view())?;
    let shifted = &filter.centers - &q.bias;
    Ok(shifted.dot(&p.pinv.t()))
}

/// Per-rule amplitude spectra of a firing time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpectra {
    /// Hz, DC excluded.
    pub frequencies: Vec<f64>,
    /// `R × n_freq`
    pub magnitudes: Vec<Vec<f64>>,
    /// Top non-DC local maximum per rule; `None` for a flat spectrum.
    pub peaks: Vec<Option<f64>>,
}

/// Spectra of the mean-removed firing column of every rule over `(0, fs/2]`.
pub fn rule_spectra(temporal_firing: ArrayView2<'_, f64>, fs: f64) -> Result<RuleSpectra> {
    let (s, r) = temporal_firing.dim();
    if s < 2 {
        return Err(Error::Contract(format!(
            "firing spectra need at least 2 time points, got {s}"
        )));
    }
    let df = fs / s as f64;
    let frequencies: Vec<f64> = (1..=s / 2).map(|k| k as f64 * df).collect();
    let mut magnitudes = Vec::with_capacity(r);
    let mut peaks = Vec::with_capacity(r);
    for col in temporal_firing.axis_iter(Axis(1)) {
        let mean = col.sum() / s as f64;
        let centered: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let spec = amplitude_spectrum(&centered);
        let mags: Vec<f64> = spec[1..].to_vec();
        peaks.push(top_peak(&mags).map(|i| frequencies[i]));
        magnitudes.push(mags);
    }
    Ok(RuleSpectra {
        frequencies,
        magnitudes,
        peaks,
    })
}

/// Index of the largest local maximum, ignoring numerically flat spectra.
fn top_peak(mags: &[f64]) -> Option<usize> {
    let max = mags.iter().copied().fold(0.0, f64::max);
    if max <= 1e-12 {
        return None;
    }
    let n = mags.len();
    (0..n)
        .filter(|&i| {
            let left = i == 0 || mags[i] >= mags[i - 1];
            let right = i + 1 == n || mags[i] >= mags[i + 1];
            left && right
        })
        .max_by(|&a, &b| mags[a].total_cmp(&mags[b]).then(b.cmp(&a)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormAxis {
    /// Scale each token row across the rules.
    Rules,
    /// Scale each rule column across the tokens.
    Tokens,
}

/// Min-max scaling to `[0, 1]` for display. Constant slices map to 0.
pub fn min_max_normalize(m: ArrayView2<'_, f64>, axis: NormAxis) -> Array2<f64> {
    let mut out = m.to_owned();
    let lanes = match axis {
        NormAxis::Rules => Axis(0),
        NormAxis::Tokens => Axis(1),
    };
    for mut lane in out.axis_iter_mut(lanes) {
        let lo = lane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = lane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        lane.mapv_inplace(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
    }
    out
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

/// Firing-weighted average of the tokens each rule responds to, `R × D`.
fn weighted_mean_tokens(firing: &Array2<f64>, tokens: &Array2<f64>) -> Array2<f64> {
    let mut out = firing.t().dot(tokens);
    let mass = firing.sum_axis(Axis(0));
    for (mut row, &w) in out.outer_iter_mut().zip(mass.iter()) {
        if w > 0.0 {
            row /= w;
        }
    }
    out
}

/// Everything the decoder exposes about a single window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    /// `C × R`
    pub spatial_firing: Option<Vec<Vec<f64>>>,
    /// `S × R`
    pub temporal_firing: Option<Vec<Vec<f64>>>,
    /// Column means of the spatial firing matrix, one value per rule.
    pub mean_spatial_firing: Option<Vec<f64>>,
    pub mean_temporal_firing: Option<Vec<f64>>,
    /// `R × S`
    pub recovered_spatial_centers: Option<Vec<Vec<f64>>>,
    /// `R × C`
    pub recovered_temporal_centers: Option<Vec<Vec<f64>>>,
    /// `R × S`, in the spatial filter's input space.
    pub spatial_rule_tokens: Option<Vec<Vec<f64>>>,
    /// `R × C`, in the temporal filter's input space.
    pub temporal_rule_tokens: Option<Vec<Vec<f64>>>,
    /// Time-domain models with a temporal filter only.
    pub rule_spectra: Option<RuleSpectra>,
    pub logits: Vec<f64>,
    pub predicted_class: usize,
    pub true_class: Option<usize>,
}

impl ExplainReport {
    pub fn spatial_firing_matrix(&self) -> Option<Array2<f64>> {
        self.spatial_firing.as_deref().map(to_array)
    }

    pub fn temporal_firing_matrix(&self) -> Option<Array2<f64>> {
        self.temporal_firing.as_deref().map(to_array)
    }

    /// True when some rule's top firing peak lies within `tol` Hz of one of
    /// the first `n_harmonics` multiples of `f`.
    pub fn has_harmonic_peak(&self, f: f64, n_harmonics: usize, tol: f64) -> bool {
        self.rule_spectra.as_ref().is_some_and(|s| {
            s.peaks.iter().flatten().any(|&p| {
                (1..=n_harmonics).any(|k| (p - k as f64 * f).abs() <= tol)
            })
        })
    }
}

pub fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((n, m), |(i, j)| rows[i][j])
}

/// Inference-mode forward of one `C × F` window, capturing both firing
/// matrices.
pub fn firing_report(
    model: &ModelParams,
    x: ArrayView2<'_, f64>,
    fs: f64,
    true_class: Option<usize>,
) -> Result<ExplainReport> {
    let (logits, cache) = model.forward_one(x, None)?;
    let spatial = cache.spatial_cache();
    let temporal = cache.temporal_cache();
    let recovered_spatial_centers = match &model.spatial {
        Some(f) => Some(rows(&recover_centers(f)?)),
        None => None,
    };
    let recovered_temporal_centers = match &model.temporal {
        Some(f) => Some(rows(&recover_centers(f)?)),
        None => None,
    };
    let rule_spectra = match (temporal, model.config.feature_mode) {
        (Some(t), FeatureMode::TimeDomain) => Some(rule_spectra(t.firing().view(), fs)?),
        _ => None,
    };
    let col_mean = |m: &Array2<f64>| m.mean_axis(Axis(0)).map(|v| v.to_vec());
    Ok(ExplainReport {
        spatial_firing: spatial.map(|c| rows(c.firing())),
        temporal_firing: temporal.map(|c| rows(c.firing())),
        mean_spatial_firing: spatial.and_then(|c| col_mean(c.firing())),
        mean_temporal_firing: temporal.and_then(|c| col_mean(c.firing())),
        recovered_spatial_centers,
        recovered_temporal_centers,
        spatial_rule_tokens: spatial.map(|c| rows(&weighted_mean_tokens(c.firing(), c.tokens()))),
        temporal_rule_tokens: temporal
            .map(|c| rows(&weighted_mean_tokens(c.firing(), c.tokens()))),
        rule_spectra,
        predicted_class: argmax(logits.view()),
        logits: logits.to_vec(),
        true_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzzy::ConsequentMode;
    use crate::network::{FilterOrder, ModelConfig};
    use crate::rng;
    use ndarray::{arr2, Array};
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, &[]);
        Array::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut r))
    }

    fn penrose_residuals(w: &Array2<f64>, p: &Array2<f64>) -> (f64, f64) {
        let a = (&w.dot(p).dot(w) - w).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let b = (&p.dot(w).dot(p) - p).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (a, b)
    }

    #[test]
    fn identity_and_diagonal() {
        let p = pinv(Array2::<f64>::eye(4).view()).unwrap();
        assert_eq!(p.rank, 4);
        for ((i, j), v) in p.pinv.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
        }
        let p = pinv(arr2(&[[2.0, 0.0], [0.0, 0.0]]).view()).unwrap();
        assert_eq!(p.rank, 1);
        assert!((p.pinv[[0, 0]] - 0.5).abs() < 1e-15);
        assert_eq!(p.pinv[[1, 1]], 0.0);
    }

    #[test]
    fn rectangular_identities() {
        for (m, n, seed) in [(5, 3, 1), (3, 5, 2), (64, 32, 3)] {
            let w = random(m, n, seed);
            let p = pinv(w.view()).unwrap();
            assert_eq!(p.pinv.dim(), (n, m));
            let (a, b) = penrose_residuals(&w, &p.pinv);
            assert!(a < 1e-10 && b < 1e-10, "{m}x{n}: {a} {b}");
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut w = Array2::eye(2);
        w[[0, 1]] = f64::NAN;
        assert!(matches!(pinv(w.view()), Err(Error::Numeric(_))));
    }

    #[test]
    fn recover_identity_layer() {
        let y = Array1::from(vec![1.0, -2.0, 3.5]);
        let x = recover_input(&LinearMap::identity(3), y.view()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn recover_from_singular_layer() {
        let mut w = random(6, 6, 4);
        let col = w.column(0).to_owned();
        w.column_mut(5).assign(&col);
        let layer = LinearMap {
            weight: w,
            bias: random(1, 6, 5).row(0).to_owned(),
        };
        let x = random(1, 6, 6).row(0).to_owned();
        let y = layer.weight.dot(&x) + &layer.bias;
        let x_hat = recover_input(&layer, y.view()).unwrap();
        let y_hat = layer.weight.dot(&x_hat) + &layer.bias;
        assert!((&y_hat - &y).iter().all(|d| d.abs() < 1e-8));
    }

    #[test]
    fn centers_round_trip() {
        let mut f = FuzzyFilter::init(8, 3, ConsequentMode::ZeroOrder, 2).unwrap();
        f.query.bias = random(1, 8, 9).row(0).to_owned();
        let c = recover_centers(&f).unwrap();
        let back = f.query.apply(c.view());
        assert!((&back - &f.centers).iter().all(|d| d.abs() < 1e-8));
        f.query = LinearMap::identity(8);
        assert_eq!(recover_centers(&f).unwrap(), f.centers);
    }

    #[test]
    fn spectra_of_constant_and_sinusoid() {
        let flat = Array2::from_elem((256, 2), 0.3);
        let s = rule_spectra(flat.view(), 256.0).unwrap();
        assert!(s.magnitudes.iter().flatten().all(|&m| m.abs() < 1e-12));
        assert_eq!(s.peaks, vec![None, None]);

        let col = Array2::from_shape_fn((256, 1), |(t, _)| {
            0.5 + 0.4 * (2.0 * std::f64::consts::PI * 10.0 * t as f64 / 256.0).sin()
        });
        let s = rule_spectra(col.view(), 256.0).unwrap();
        assert_eq!(s.peaks[0], Some(10.0));
        assert_eq!(s.frequencies.len(), 128);
        let shifted = col.mapv(|v| v + 2.0);
        let moved = rule_spectra(shifted.view(), 256.0).unwrap();
        for (a, b) in moved.magnitudes[0].iter().zip(&s.magnitudes[0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(moved.peaks, s.peaks);
    }

    #[test]
    fn single_rule_fires_fully() {
        let mut cfg = ModelConfig::new(4, 64, 3);
        cfg.rules = 1;
        cfg.hidden = 8;
        let model = ModelParams::init(cfg, 1).unwrap();
        let x = random(4, 64, 3);
        let rep = firing_report(&model, x.view(), 64.0, Some(2)).unwrap();
        let sf = rep.spatial_firing_matrix().unwrap();
        let tf = rep.temporal_firing_matrix().unwrap();
        assert_eq!(sf.dim(), (4, 1));
        assert_eq!(tf.dim(), (64, 1));
        assert!(sf.iter().chain(tf.iter()).all(|&v| v == 1.0));
        assert_eq!(rep.true_class, Some(2));
    }

    #[test]
    fn report_shapes_and_row_sums() {
        for order in FilterOrder::ALL {
            let mut cfg = ModelConfig::new(4, 32, 3);
            cfg.rules = 5;
            cfg.hidden = 8;
            cfg.filter_order = order;
            let model = ModelParams::init(cfg, 7).unwrap();
            let x = random(4, 32, 8);
            let rep = firing_report(&model, x.view(), 32.0, None).unwrap();
            assert_eq!(rep.spatial_firing.is_some(), order.uses_spatial());
            assert_eq!(rep.temporal_firing.is_some(), order.uses_temporal());
            if let Some(m) = rep.spatial_firing_matrix() {
                assert!(m.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9));
                let means = rep.mean_spatial_firing.as_ref().unwrap();
                assert_eq!(means.len(), 5);
                let c = rep.recovered_spatial_centers.as_ref().unwrap();
                assert_eq!((c.len(), c[0].len()), (5, 32));
            }
            if let Some(s) = &rep.rule_spectra {
                assert_eq!(s.magnitudes.len(), 5);
                assert!(s.magnitudes.iter().flatten().all(|&m| m >= 0.0));
            }
            assert_eq!(firing_report(&model, x.view(), 32.0, None).unwrap(), rep);
        }
    }

    #[test]
    fn normalization_axes() {
        let m = arr2(&[[0.2, 0.8], [0.5, 0.5], [0.1, 0.9]]);
        let by_rule = min_max_normalize(m.view(), NormAxis::Rules);
        assert_eq!(by_rule.row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(by_rule.row(1).to_vec(), vec![0.0, 0.0]);
        let by_token = min_max_normalize(m.view(), NormAxis::Tokens);
        assert!((by_token[[0, 0]] - 0.25).abs() < 1e-12);
        assert_eq!(by_token[[1, 0]], 1.0);
        assert_eq!(by_token[[2, 0]], 0.0);
    }
}
