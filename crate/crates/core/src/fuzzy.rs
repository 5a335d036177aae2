//! Fuzzy attention filter.
//!
//! Every token is projected by a square query map, compared against `R`
//! Gaussian rule prototypes, and the normalized rule memberships (firing
//! strengths) mix the rule consequents:
//!
//! ```text
//! q        = W_Q x + b_Q
//! logit_r  = -Σ_d (q_d - m_{r,d})² / (2 σ_{r,d}²)
//! f        = softmax_r(logit)
//! y        = Σ_r f_r u_r          (zero order)
//! y        = Σ_r f_r V_r x        (first order)
//! ```
//!
//! Tokens are processed independently, so a batch of samples is simply a
//! taller token matrix.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{view, view_mut, Parameters, TensorView, TensorViewMut};
use crate::rng;

/// Lower bound enforced on every rule width after each optimizer step.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsequentMode {
    /// Learnable constant vector per rule.
    ZeroOrder,
    /// Learnable linear map of the token per rule.
    FirstOrder,
}

impl ConsequentMode {
    pub fn code(self) -> u8 {
        match self {
            ConsequentMode::ZeroOrder => 0,
            ConsequentMode::FirstOrder => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ConsequentMode::ZeroOrder),
            1 => Some(ConsequentMode::FirstOrder),
            _ => None,
        }
    }
}

/// Affine map `y = W x + b` applied row-wise to token matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    /// `D_out × D_in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearMap {
    pub fn identity(d: usize) -> Self {
        LinearMap {
            weight: Array2::eye(d),
            bias: Array1::zeros(d),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the map to every row of `tokens` (`T × D_in` → `T × D_out`).
    pub fn apply(&self, tokens: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut q = tokens.dot(&self.weight.t());
        q += &self.bias;
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Consequent {
    /// `R × D`
    ZeroOrder(Array2<f64>),
    /// `R × D × D`, one matrix per rule.
    FirstOrder(Array3<f64>),
}

impl Consequent {
    pub fn mode(&self) -> ConsequentMode {
        match self {
            Consequent::ZeroOrder(_) => ConsequentMode::ZeroOrder,
            Consequent::FirstOrder(_) => ConsequentMode::FirstOrder,
        }
    }
}

/// Normalized rule activations, `T × R`, each row summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringMatrix(pub Array2<f64>);

impl FiringMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Learnables of one fuzzy attention filter over tokens of width `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyFilter {
    pub query: LinearMap,
    /// Rule centers `m`, `R × D`.
    pub centers: Array2<f64>,
    /// Rule widths `σ`, `R × D`.
    pub widths: Array2<f64>,
    pub consequent: Consequent,
}

/// Intermediates retained by [`FuzzyFilter::forward`].
#[derive(Debug, Clone)]
pub struct FilterCache {
    tokens: Array2<f64>,
    queries: Array2<f64>,
    firing: Array2<f64>,
    /// First order only: `V_r x_t` for every rule.
    rule_outputs: Vec<Array2<f64>>,
}

impl FilterCache {
    pub fn firing(&self) -> &Array2<f64> {
        &self.firing
    }

    pub fn queries(&self) -> &Array2<f64> {
        &self.queries
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }
}

impl FuzzyFilter {
    /// Random initialization: `W_Q ~ U(±1/√D)`, `b_Q = 0`, `m ~ N(0, 0.5²)`,
    /// `σ = 1`, consequents `N(0, 0.02²)` (identity-centred in first order).
    pub fn init(d: usize, r: usize, mode: ConsequentMode, seed: u64) -> Result<Self> {
        if d == 0 || r == 0 {
            return Err(Error::Contract(format!(
                "filter needs D >= 1 and R >= 1, got D={d} R={r}"
            )));
        }
        let mut g = rng::stream(seed, &[rng::tag::INIT]);
        let bound = 1.0 / (d as f64).sqrt();
        let weight = Array2::from_shape_fn((d, d), |_| g.random_range(-bound..=bound));
        let center_dist = Normal::new(0.0, 0.5).expect("valid normal");
        let centers = Array2::from_shape_fn((r, d), |_| center_dist.sample(&mut g));
        let small = Normal::new(0.0, 0.02).expect("valid normal");
        let consequent = match mode {
            ConsequentMode::ZeroOrder => {
                Consequent::ZeroOrder(Array2::from_shape_fn((r, d), |_| small.sample(&mut g)))
            }
            ConsequentMode::FirstOrder => Consequent::FirstOrder(Array3::from_shape_fn(
                (r, d, d),
                |(_, i, j)| if i == j { 1.0 } else { 0.0 } + small.sample(&mut g),
            )),
        };
        Ok(FuzzyFilter {
            query: LinearMap {
                weight,
                bias: Array1::zeros(d),
            },
            centers,
            widths: Array2::ones((r, d)),
            consequent,
        })
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn n_rules(&self) -> usize {
        self.centers.nrows()
    }

    pub fn mode(&self) -> ConsequentMode {
        self.consequent.mode()
    }

    /// Same structure, every entry zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let (r, d) = self.centers.dim();
        FuzzyFilter {
            query: LinearMap {
                weight: Array2::zeros((d, d)),
                bias: Array1::zeros(d),
            },
            centers: Array2::zeros((r, d)),
            widths: Array2::zeros((r, d)),
            consequent: match &self.consequent {
                Consequent::ZeroOrder(_) => Consequent::ZeroOrder(Array2::zeros((r, d))),
                Consequent::FirstOrder(_) => Consequent::FirstOrder(Array3::zeros((r, d, d))),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (r, d) = self.centers.dim();
        if r == 0 || d == 0 {
            return Err(Error::Shape("filter with zero rules or zero width".into()));
        }
        if self.query.weight.dim() != (d, d) || self.query.bias.len() != d {
            return Err(Error::Shape(format!(
                "query map is {:?}/{}, expected ({d}, {d})/{d}",
                self.query.weight.dim(),
                self.query.bias.len()
            )));
        }
        if self.widths.dim() != (r, d) {
            return Err(Error::Shape(format!(
                "widths are {:?}, expected ({r}, {d})",
                self.widths.dim()
            )));
        }
        let ok = match &self.consequent {
            Consequent::ZeroOrder(u) => u.dim() == (r, d),
            Consequent::FirstOrder(v) => v.dim() == (r, d, d),
        };
        if !ok {
            return Err(Error::Shape("consequent shape does not match rules/width".into()));
        }
        if let Some(s) = self.widths.iter().find(|&&s| !(s >= SIGMA_FLOOR)) {
            return Err(Error::Numeric(format!(
                "rule width {s} below floor {SIGMA_FLOOR}"
            )));
        }
        Ok(())
    }

    pub fn clamp_widths(&mut self) {
        self.widths.mapv_inplace(|s| s.max(SIGMA_FLOOR));
    }

    fn check_tokens(&self, tokens: ArrayView2<'_, f64>) -> Result<()> {
        if tokens.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "token width {} does not match filter width {}",
                tokens.ncols(),
                self.dim()
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite token value".into()));
        }
        Ok(())
    }

    /// Unnormalized rule log-memberships for already projected queries.
    pub fn logits(&self, queries: ArrayView2<'_, f64>) -> Array2<f64> {
        let (t, _) = queries.dim();
        let r = self.n_rules();
        let inv = self.widths.mapv(|s| 0.5 / (s * s));
        let mut out = Array2::zeros((t, r));
        for (q, mut row) in queries.outer_iter().zip(out.outer_iter_mut()) {
            for (rule, l) in row.iter_mut().enumerate() {
                let m = self.centers.row(rule);
                let w = inv.row(rule);
                let mut acc = 0.0;
                for ((&qd, &md), &wd) in q.iter().zip(m.iter()).zip(w.iter()) {
                    let diff = qd - md;
                    acc += diff * diff * wd;
                }
                *l = -acc;
            }
        }
        out
    }

    pub fn firing_strengths(&self, tokens: ArrayView2<'_, f64>) -> Result<FiringMatrix> {
        self.check_tokens(tokens)?;
        let q = self.query.apply(tokens);
        Ok(FiringMatrix(softmax_rows(self.logits(q.view()))))
    }

    /// Filter output (same shape as `tokens`) plus the cache for backward.
    pub fn forward(&self, tokens: ArrayView2<'_, f64>) -> Result<(Array2<f64>, FilterCache)> {
        self.check_tokens(tokens)?;
        let queries = self.query.apply(tokens);
        let firing = softmax_rows(self.logits(queries.view()));
        let (output, rule_outputs) = match &self.consequent {
            Consequent::ZeroOrder(u) => (firing.dot(u), Vec::new()),
            Consequent::FirstOrder(v) => {
                let mut out = Array2::zeros(tokens.raw_dim());
                let mut zs = Vec::with_capacity(self.n_rules());
                for (r, vr) in v.outer_iter().enumerate() {
                    let z = tokens.dot(&vr.t());
                    let f = firing.column(r).insert_axis(Axis(1));
                    out += &(&z * &f);
                    zs.push(z);
                }
                (out, zs)
            }
        };
        let cache = FilterCache {
            tokens: tokens.to_owned(),
            queries,
            firing,
            rule_outputs,
        };
        Ok((output, cache))
    }

    /// Reverse pass: gradients w.r.t. the tokens and every learnable.
    pub fn backward(
        &self,
        cache: &FilterCache,
        d_output: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, FuzzyFilter)> {
        let (t, d) = cache.tokens.dim();
        let r = self.n_rules();
        if d != self.dim() || cache.firing.dim() != (t, r) {
            return Err(Error::Contract(
                "filter cache does not belong to this filter".into(),
            ));
        }
        if d_output.dim() != (t, d) {
            return Err(Error::Contract(format!(
                "output gradient is {:?}, expected ({t}, {d})",
                d_output.dim()
            )));
        }
        let firing = &cache.firing;
        let mut grads = self.zeros_like();
        let mut d_tokens = Array2::zeros((t, d));

        // Consequent path and gradient w.r.t. firing strengths.
        let d_firing = match (&self.consequent, &mut grads.consequent) {
            (Consequent::ZeroOrder(u), Consequent::ZeroOrder(du)) => {
                *du = firing.t().dot(&d_output);
                d_output.dot(&u.t())
            }
            (Consequent::FirstOrder(v), Consequent::FirstOrder(dv)) => {
                if cache.rule_outputs.len() != r {
                    return Err(Error::Contract("first-order cache is missing rule outputs".into()));
                }
                let mut d_firing = Array2::zeros((t, r));
                for rule in 0..r {
                    let z = &cache.rule_outputs[rule];
                    for ti in 0..t {
                        d_firing[[ti, rule]] = d_output.row(ti).dot(&z.row(ti));
                    }
                    let f = firing.column(rule).insert_axis(Axis(1));
                    let g = &d_output * &f;
                    dv.index_axis_mut(Axis(0), rule).assign(&g.t().dot(&cache.tokens));
                    d_tokens += &g.dot(&v.index_axis(Axis(0), rule));
                }
                d_firing
            }
            _ => unreachable!("zeros_like preserves the consequent mode"),
        };

        // Softmax backward: dlogit = f ⊙ (df - <f, df>)
        let mut d_logits = Array2::zeros((t, r));
        for ti in 0..t {
            let f = firing.row(ti);
            let df = d_firing.row(ti);
            let inner = f.dot(&df);
            for rule in 0..r {
                d_logits[[ti, rule]] = f[rule] * (df[rule] - inner);
            }
        }

        // Membership backward.
        let inv_sq = self.widths.mapv(|s| 1.0 / (s * s));
        let inv_cube = self.widths.mapv(|s| 1.0 / (s * s * s));
        let mut d_queries = Array2::<f64>::zeros((t, d));
        for ti in 0..t {
            let q = cache.queries.row(ti);
            let mut dq = d_queries.row_mut(ti);
            for rule in 0..r {
                let g = d_logits[[ti, rule]];
                if g == 0.0 {
                    continue;
                }
                let m = self.centers.row(rule);
                let is2 = inv_sq.row(rule);
                let is3 = inv_cube.row(rule);
                let mut dm = grads.centers.row_mut(rule);
                let mut ds = grads.widths.row_mut(rule);
                for k in 0..d {
                    let diff = q[k] - m[k];
                    let a = g * diff * is2[k];
                    dq[k] -= a;
                    dm[k] += a;
                    ds[k] += g * diff * diff * is3[k];
                }
            }
        }
        grads.query.weight = d_queries.t().dot(&cache.tokens);
        grads.query.bias = d_queries.sum_axis(Axis(0));
        d_tokens += &d_queries.dot(&self.query.weight);
        Ok((d_tokens, grads))
    }

    pub fn tensors_with_prefix(&self, prefix: &str) -> Vec<TensorView<'_>> {
        let consequent = match &self.consequent {
            Consequent::ZeroOrder(u) => view(format!("{prefix}.consequent"), u),
            Consequent::FirstOrder(v) => view(format!("{prefix}.consequent"), v),
        };
        vec![
            view(format!("{prefix}.query.weight"), &self.query.weight),
            view(format!("{prefix}.query.bias"), &self.query.bias),
            view(format!("{prefix}.centers"), &self.centers),
            view(format!("{prefix}.widths"), &self.widths),
            consequent,
        ]
    }

    pub fn tensors_mut_with_prefix(&mut self, prefix: &str) -> Vec<TensorViewMut<'_>> {
        let consequent = match &mut self.consequent {
            Consequent::ZeroOrder(u) => view_mut(format!("{prefix}.consequent"), u),
            Consequent::FirstOrder(v) => view_mut(format!("{prefix}.consequent"), v),
        };
        vec![
            view_mut(format!("{prefix}.query.weight"), &mut self.query.weight),
            view_mut(format!("{prefix}.query.bias"), &mut self.query.bias),
            view_mut(format!("{prefix}.centers"), &mut self.centers),
            view_mut(format!("{prefix}.widths"), &mut self.widths),
            consequent,
        ]
    }
}

impl Parameters for FuzzyFilter {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        self.tensors_with_prefix("filter")
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        self.tensors_mut_with_prefix("filter")
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.outer_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|l| (l - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}
