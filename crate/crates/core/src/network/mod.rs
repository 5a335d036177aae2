//! The two-filter classifier: spatial filter over channels, temporal filter
//! over time points, then a ReLU MLP head with inverted dropout.

pub mod checkpoint;

use std::cell::Cell;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzzy::{ConsequentMode, FilterCache, FuzzyFilter};
use crate::params::{view, view_mut, Parameters, TensorView, TensorViewMut};
use crate::rng::{self, tag};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrder {
    SpatialFirst,
    TemporalFirst,
    SpatialOnly,
    TemporalOnly,
}

impl FilterOrder {
    pub const ALL: [FilterOrder; 4] = [
        FilterOrder::SpatialFirst,
        FilterOrder::TemporalFirst,
        FilterOrder::SpatialOnly,
        FilterOrder::TemporalOnly,
    ];

    pub fn code(self) -> u8 {
        match self {
            FilterOrder::SpatialFirst => 0,
            FilterOrder::TemporalFirst => 1,
            FilterOrder::SpatialOnly => 2,
            FilterOrder::TemporalOnly => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn uses_spatial(self) -> bool {
        self != FilterOrder::TemporalOnly
    }

    pub fn uses_temporal(self) -> bool {
        self != FilterOrder::SpatialOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterOrder::SpatialFirst => "spatial_first",
            FilterOrder::TemporalFirst => "temporal_first",
            FilterOrder::SpatialOnly => "spatial_only",
            FilterOrder::TemporalOnly => "temporal_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Raw windows, `C × S` samples.
    TimeDomain,
    /// Per-channel amplitude spectra, `C × n_freq`.
    Fft,
}

impl FeatureMode {
    pub fn code(self) -> u8 {
        match self {
            FeatureMode::TimeDomain => 0,
            FeatureMode::Fft => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureMode::TimeDomain),
            1 => Some(FeatureMode::Fft),
            _ => None,
        }
    }
}

/// Structural hyperparameters. `samples` is the feature length: window
/// samples in time-domain mode, frequency bins in FFT mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub samples: usize,
    pub classes: usize,
    pub rules: usize,
    pub hidden: usize,
    pub dropout_rate: f32,
    pub consequent_mode: ConsequentMode,
    pub filter_order: FilterOrder,
    pub feature_mode: FeatureMode,
}

impl ModelConfig {
    pub const DEFAULT_RULES: usize = 10;
    pub const DEFAULT_HIDDEN: usize = 128;
    pub const DEFAULT_DROPOUT: f32 = 0.3;

    pub fn new(channels: usize, samples: usize, classes: usize) -> Self {
        ModelConfig {
            channels,
            samples,
            classes,
            rules: Self::DEFAULT_RULES,
            hidden: Self::DEFAULT_HIDDEN,
            dropout_rate: Self::DEFAULT_DROPOUT,
            consequent_mode: ConsequentMode::ZeroOrder,
            filter_order: FilterOrder::SpatialFirst,
            feature_mode: FeatureMode::TimeDomain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("model.{f}");
        if self.channels == 0 {
            return Err(Error::config(field("channels"), "must be at least 1"));
        }
        if self.samples == 0 {
            return Err(Error::config(field("samples"), "must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::config(field("classes"), "need at least two classes"));
        }
        if !(1..=64).contains(&self.rules) {
            return Err(Error::config(field("rules"), "must lie in 1..=64"));
        }
        if self.hidden == 0 {
            return Err(Error::config(field("hidden"), "must be at least 1"));
        }
        if !(self.dropout_rate >= 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::config(field("dropout_rate"), "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn flat_len(&self) -> usize {
        self.channels * self.samples
    }

    /// Checks that data of shape `channels × samples` can be fed to the model.
    pub fn check_input(&self, channels: usize, samples: usize) -> Result<()> {
        if channels != self.channels || samples != self.samples {
            return Err(Error::Shape(format!(
                "model expects C={} channels x S={} samples but data is C={channels} x S={samples}",
                self.channels, self.samples
            )));
        }
        Ok(())
    }
}

/// Every learnable of the classifier.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Tokens are channels, token width `S`.
    pub spatial: Option<FuzzyFilter>,
    /// Tokens are time points, token width `C`.
    pub temporal: Option<FuzzyFilter>,
    /// `(C·S) × H`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `H × M`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    generation: Cell<u64>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.spatial == other.spatial
            && self.temporal == other.temporal
            && self.w1 == other.w1
            && self.b1 == other.b1
            && self.w2 == other.w2
            && self.b2 == other.b2
    }
}

/// Intermediates of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ModelCache {
    generation: u64,
    batch: usize,
    spatial: Option<FilterCache>,
    temporal: Option<FilterCache>,
    flat: Array2<f64>,
    pre_activation: Array2<f64>,
    /// Inverted-dropout multipliers; `None` at inference.
    mask: Option<Array2<f64>>,
    hidden: Array2<f64>,
    logits: Array2<f64>,
}

impl ModelCache {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn is_training(&self) -> bool {
        self.mask.is_some()
    }

    /// Post-dropout hidden activations, `B × H`.
    pub fn hidden(&self) -> &Array2<f64> {
        &self.hidden
    }

    pub fn spatial_firing(&self) -> Option<&Array2<f64>> {
        self.spatial.as_ref().map(|c| c.firing())
    }

    pub fn temporal_firing(&self) -> Option<&Array2<f64>> {
        self.temporal.as_ref().map(|c| c.firing())
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn spatial_cache(&self) -> Option<&FilterCache> {
        self.spatial.as_ref()
    }

    pub fn temporal_cache(&self) -> Option<&FilterCache> {
        self.temporal.as_ref()
    }
}

/// Loss of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    /// Cross-entropy in nats.
    pub value: f64,
    pub probabilities: Array1<f64>,
    pub target: usize,
}

/// Gradients of the mean batch loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ModelParams,
    /// `B × C × S`
    pub input: Array3<f64>,
}

/// Treats `m` as `B × rows × cols` and returns `(B·cols) × rows`.
fn swap_token_axes(m: &Array2<f64>, batch: usize, rows: usize, cols: usize) -> Array2<f64> {
    let cube = m
        .view()
        .into_shape_with_order((batch, rows, cols))
        .expect("token matrix matches batch layout");
    cube.permuted_axes([0, 2, 1])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((batch * cols, rows))
        .expect("contiguous reshape")
}

fn uniform_matrix<R: Rng + ?Sized>(r: &mut R, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| r.random_range(-bound..=bound))
}

fn uniform_vector<R: Rng + ?Sized>(r: &mut R, n: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| r.random_range(-bound..=bound))
}

impl ModelParams {
    /// Fresh model: filters from [`FuzzyFilter::init`], MLP layers uniform in
    /// `±1/√fan_in`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ModelConfig {
            channels: c,
            samples: s,
            classes: m,
            rules: r,
            hidden: h,
            ..
        } = config;
        let spatial = if config.filter_order.uses_spatial() {
            Some(FuzzyFilter::init(
                s,
                r,
                config.consequent_mode,
                rng::derive_seed(seed, &[tag::SPATIAL]),
            )?)
        } else {
            None
        };
        let temporal = if config.filter_order.uses_temporal() {
            Some(FuzzyFilter::init(
                c,
                r,
                config.consequent_mode,
                rng::derive_seed(seed, &[tag::TEMPORAL]),
            )?)
        } else {
            None
        };
        let mut g = rng::stream(seed, &[tag::HEAD]);
        let b_in = 1.0 / ((c * s) as f64).sqrt();
        let b_hid = 1.0 / (h as f64).sqrt();
        Ok(ModelParams {
            config,
            spatial,
            temporal,
            w1: uniform_matrix(&mut g, (c * s, h), b_in),
            b1: uniform_vector(&mut g, h, b_in),
            w2: uniform_matrix(&mut g, (h, m), b_hid),
            b2: uniform_vector(&mut g, m, b_hid),
            generation: Cell::new(0),
        })
    }

    /// Same structure, all zeros.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config,
            spatial: self.spatial.as_ref().map(FuzzyFilter::zeros_like),
            temporal: self.temporal.as_ref().map(FuzzyFilter::zeros_like),
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            generation: Cell::new(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let check_filter = |f: &Option<FuzzyFilter>, used: bool, d: usize, name: &str| -> Result<()> {
            match (f, used) {
                (Some(f), true) => {
                    f.validate()?;
                    if f.dim() != d || f.n_rules() != cfg.rules || f.mode() != cfg.consequent_mode {
                        return Err(Error::Shape(format!(
                            "{name} filter (D={}, R={}) inconsistent with config (D={d}, R={})",
                            f.dim(),
                            f.n_rules(),
                            cfg.rules
                        )));
                    }
                    Ok(())
                }
                (None, false) => Ok(()),
                (Some(_), false) => Err(Error::Shape(format!("{name} filter present but unused"))),
                (None, true) => Err(Error::Shape(format!("{name} filter missing"))),
            }
        };
        check_filter(&self.spatial, cfg.filter_order.uses_spatial(), cfg.samples, "spatial")?;
        check_filter(&self.temporal, cfg.filter_order.uses_temporal(), cfg.channels, "temporal")?;
        if self.w1.dim() != (cfg.flat_len(), cfg.hidden)
            || self.b1.len() != cfg.hidden
            || self.w2.dim() != (cfg.hidden, cfg.classes)
            || self.b2.len() != cfg.classes
        {
            return Err(Error::Shape("MLP head shapes inconsistent with config".into()));
        }
        Ok(())
    }

    /// Counter bumped whenever parameters are handed out mutably.
    pub fn generation(&self) -> u64 {
        self.generation.get()
    }

    pub fn forward_eval(&self, x: ArrayView3<'_, f64>) -> Result<(Array2<f64>, ModelCache)> {
        self.forward_impl(x, None)
    }

    pub fn forward_train(
        &self,
        x: ArrayView3<'_, f64>,
        dropout_rng: &mut dyn RngCore,
    ) -> Result<(Array2<f64>, ModelCache)> {
        self.forward_impl(x, Some(dropout_rng))
    }

    /// Single-sample convenience wrapper; `rng` enables training mode.
    pub fn forward_one(
        &self,
        x: ArrayView2<'_, f64>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Array1<f64>, ModelCache)> {
        let batch = x.insert_axis(Axis(0));
        let (logits, cache) = self.forward_impl(batch, rng)?;
        Ok((logits.row(0).to_owned(), cache))
    }

    /// Predicted class per sample (inference mode).
    pub fn predict(&self, x: ArrayView3<'_, f64>) -> Result<Vec<usize>> {
        let (logits, _) = self.forward_eval(x)?;
        Ok(logits.outer_iter().map(|row| argmax(row)).collect())
    }

    fn forward_impl(
        &self,
        x: ArrayView3<'_, f64>,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<(Array2<f64>, ModelCache)> {
        let cfg = &self.config;
        let (b, c, s) = x.dim();
        cfg.check_input(c, s)?;
        if b == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let x = x.as_standard_layout();
        let channel_tokens = || {
            x.view()
                .into_shape_with_order((b * c, s))
                .expect("standard layout")
                .to_owned()
        };
        let time_tokens = || swap_token_axes(&channel_tokens(), b, c, s);

        let mut spatial_cache = None;
        let mut temporal_cache = None;
        let flat_tokens = match cfg.filter_order {
            FilterOrder::SpatialFirst => {
                let (y, sc) = self.spatial()?.forward(channel_tokens().view())?;
                let (z, tc) = self.temporal()?.forward(swap_token_axes(&y, b, c, s).view())?;
                spatial_cache = Some(sc);
                temporal_cache = Some(tc);
                z
            }
            FilterOrder::TemporalFirst => {
                let (y, tc) = self.temporal()?.forward(time_tokens().view())?;
                let (z, sc) = self.spatial()?.forward(swap_token_axes(&y, b, s, c).view())?;
                spatial_cache = Some(sc);
                temporal_cache = Some(tc);
                z
            }
            FilterOrder::SpatialOnly => {
                let (y, sc) = self.spatial()?.forward(channel_tokens().view())?;
                spatial_cache = Some(sc);
                y
            }
            FilterOrder::TemporalOnly => {
                let (y, tc) = self.temporal()?.forward(time_tokens().view())?;
                temporal_cache = Some(tc);
                y
            }
        };
        let flat = flat_tokens
            .into_shape_with_order((b, c * s))
            .expect("contiguous token matrix");

        let mut pre = flat.dot(&self.w1);
        pre += &self.b1;
        let mut hidden = pre.mapv(|v| v.max(0.0));
        let mask = match dropout_rng {
            Some(r) => {
                let p = cfg.dropout_rate as f64;
                let keep = 1.0 / (1.0 - p);
                let mask = Array2::from_shape_fn(hidden.raw_dim(), |_| {
                    if r.random::<f64>() >= p {
                        keep
                    } else {
                        0.0
                    }
                });
                hidden *= &mask;
                Some(mask)
            }
            None => None,
        };
        let mut logits = hidden.dot(&self.w2);
        logits += &self.b2;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        let cache = ModelCache {
            generation: self.generation.get(),
            batch: b,
            spatial: spatial_cache,
            temporal: temporal_cache,
            flat,
            pre_activation: pre,
            mask,
            hidden,
            logits: logits.clone(),
        };
        Ok((logits, cache))
    }

    fn spatial(&self) -> Result<&FuzzyFilter> {
        self.spatial
            .as_ref()
            .ok_or_else(|| Error::Shape("model has no spatial filter".into()))
    }

    fn temporal(&self) -> Result<&FuzzyFilter> {
        self.temporal
            .as_ref()
            .ok_or_else(|| Error::Shape("model has no temporal filter".into()))
    }

    /// Gradients of the mean cross-entropy over the cached batch.
    pub fn backward(&self, cache: &ModelCache, labels: &[usize]) -> Result<Gradients> {
        let d_logits = self.logit_gradient(cache, labels)?;
        self.backward_from_logits(cache, d_logits.view())
    }

    /// `(softmax(logits) - onehot) / B`.
    pub fn logit_gradient(&self, cache: &ModelCache, labels: &[usize]) -> Result<Array2<f64>> {
        if labels.len() != cache.batch {
            return Err(Error::Contract(format!(
                "{} labels for a batch of {}",
                labels.len(),
                cache.batch
            )));
        }
        let m = self.config.classes;
        let mut d = Array2::zeros((cache.batch, m));
        for (i, (&label, row)) in labels.iter().zip(cache.logits.outer_iter()).enumerate() {
            let rec = cross_entropy(row, label)?;
            let mut out = d.row_mut(i);
            out.assign(&rec.probabilities);
            out[label] -= 1.0;
        }
        d /= cache.batch as f64;
        Ok(d)
    }

    /// Backpropagates an arbitrary upstream gradient on the logits.
    pub fn backward_from_logits(
        &self,
        cache: &ModelCache,
        d_logits: ArrayView2<'_, f64>,
    ) -> Result<Gradients> {
        if cache.generation != self.generation.get() {
            return Err(Error::Contract(
                "stale cache: parameters changed since the forward pass".into(),
            ));
        }
        let cfg = &self.config;
        let (b, c, s) = (cache.batch, cfg.channels, cfg.samples);
        if d_logits.dim() != (b, cfg.classes) {
            return Err(Error::Contract("logit gradient shape mismatch".into()));
        }
        let mut grads = self.zeros_like();

        grads.w2 = cache.hidden.t().dot(&d_logits);
        grads.b2 = d_logits.sum_axis(Axis(0));
        let mut d_pre = d_logits.dot(&self.w2.t());
        if let Some(mask) = &cache.mask {
            d_pre *= mask;
        }
        ndarray::Zip::from(&mut d_pre)
            .and(&cache.pre_activation)
            .for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0
                }
            });
        grads.w1 = cache.flat.t().dot(&d_pre);
        grads.b1 = d_pre.sum_axis(Axis(0));
        let d_flat = d_pre.dot(&self.w1.t());

        let missing = || Error::Contract("cache lacks a filter stage".into());
        let d_input_tokens = match cfg.filter_order {
            FilterOrder::SpatialFirst => {
                let d_z = d_flat.into_shape_with_order((b * s, c)).expect("layout");
                let (d_y, gt) = self.temporal()?.backward(cache.temporal.as_ref().ok_or_else(missing)?, d_z.view())?;
                let d_y = swap_token_axes(&d_y, b, s, c);
                let (d_x, gs) = self.spatial()?.backward(cache.spatial.as_ref().ok_or_else(missing)?, d_y.view())?;
                grads.spatial = Some(gs);
                grads.temporal = Some(gt);
                d_x
            }
            FilterOrder::TemporalFirst => {
                let d_z = d_flat.into_shape_with_order((b * c, s)).expect("layout");
                let (d_y, gs) = self.spatial()?.backward(cache.spatial.as_ref().ok_or_else(missing)?, d_z.view())?;
                let d_y = swap_token_axes(&d_y, b, c, s);
                let (d_x, gt) = self.temporal()?.backward(cache.temporal.as_ref().ok_or_else(missing)?, d_y.view())?;
                grads.spatial = Some(gs);
                grads.temporal = Some(gt);
                swap_token_axes(&d_x, b, s, c)
            }
            FilterOrder::SpatialOnly => {
                let d_z = d_flat.into_shape_with_order((b * c, s)).expect("layout");
                let (d_x, gs) = self.spatial()?.backward(cache.spatial.as_ref().ok_or_else(missing)?, d_z.view())?;
                grads.spatial = Some(gs);
                d_x
            }
            FilterOrder::TemporalOnly => {
                let d_z = d_flat.into_shape_with_order((b * s, c)).expect("layout");
                let (d_x, gt) = self.temporal()?.backward(cache.temporal.as_ref().ok_or_else(missing)?, d_z.view())?;
                grads.temporal = Some(gt);
                swap_token_axes(&d_x, b, s, c)
            }
        };
        let input = d_input_tokens
            .into_shape_with_order((b, c, s))
            .expect("layout");
        Ok(Gradients {
            params: grads,
            input,
        })
    }

    /// Clamps every fuzzy width to the floor.
    pub fn clamp_widths(&mut self) {
        self.bump();
        for f in [&mut self.spatial, &mut self.temporal].into_iter().flatten() {
            f.clamp_widths();
        }
    }

    fn bump(&self) {
        self.generation.set(self.generation.get().wrapping_add(1));
    }

    /// Element count of the filters only (per order), for ablation bookkeeping.
    pub fn filter_param_counts(&self) -> (usize, usize) {
        (
            self.spatial.as_ref().map_or(0, |f| f.param_count()),
            self.temporal.as_ref().map_or(0, |f| f.param_count()),
        )
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        if let Some(f) = &self.spatial {
            out.extend(f.tensors_with_prefix("spatial"));
        }
        if let Some(f) = &self.temporal {
            out.extend(f.tensors_with_prefix("temporal"));
        }
        out.push(view("head.w1".into(), &self.w1));
        out.push(view("head.b1".into(), &self.b1));
        out.push(view("head.w2".into(), &self.w2));
        out.push(view("head.b2".into(), &self.b2));
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        self.bump();
        let mut out = Vec::new();
        if let Some(f) = &mut self.spatial {
            out.extend(f.tensors_mut_with_prefix("spatial"));
        }
        if let Some(f) = &mut self.temporal {
            out.extend(f.tensors_mut_with_prefix("temporal"));
        }
        out.push(view_mut("head.w1".into(), &mut self.w1));
        out.push(view_mut("head.b1".into(), &mut self.b1));
        out.push(view_mut("head.w2".into(), &mut self.w2));
        out.push(view_mut("head.b2".into(), &mut self.b2));
        out
    }
}

pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy of one logit vector, in nats.
pub fn cross_entropy(logits: ArrayView1<'_, f64>, label: usize) -> Result<LossRecord> {
    let m = logits.len();
    if label >= m {
        return Err(Error::Index {
            name: "label",
            index: label,
            limit: m,
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = logits.mapv(|l| (l - max).exp());
    let sum = shifted.sum();
    let lse = max + sum.ln();
    Ok(LossRecord {
        value: (lse - logits[label]).max(0.0),
        probabilities: shifted / sum,
        target: label,
    })
}
