//! Central finite-difference verification of the analytic backward pass.

use ndarray::{Array3, ArrayView3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fuzzy::Consequent;
use crate::network::{cross_entropy, Gradients, ModelConfig, ModelParams};
use crate::params::Parameters;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub h: f64,
    pub tolerance: f64,
    pub batch: usize,
    /// Run the head in training mode with a dropout mask that is identical
    /// for every evaluation.
    pub dropout: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tolerance: 1e-4,
            batch: 3,
            dropout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Multi-index of the worst coordinate.
    pub worst_index: Vec<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub precision: String,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failed_groups(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.group.as_str())
            .collect()
    }
}

/// Gradient magnitude below which errors are measured against this value
/// instead of the gradient itself. A central difference at `h = 1e-5`
/// carries about `ε·|L|/h ≈ 3e-11` of rounding noise, so smaller gradients
/// cannot be resolved to `1e-4` relative precision.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRADIENT_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

/// Signature of a backward pass under test.
pub type GradientFn<'a> = dyn Fn(&ModelParams, ArrayView3<'_, f64>, &[usize], u64) -> Result<Gradients> + 'a;

/// The model's own backward pass, with the same dropout stream as the loss.
pub fn analytic_gradients(
    model: &ModelParams,
    x: ArrayView3<'_, f64>,
    labels: &[usize],
    mask_seed: u64,
) -> Result<Gradients> {
    let (_, cache) = forward(model, x, mask_seed)?;
    model.backward(&cache, labels)
}

fn forward(
    model: &ModelParams,
    x: ArrayView3<'_, f64>,
    mask_seed: u64,
) -> Result<(ndarray::Array2<f64>, crate::network::ModelCache)> {
    if mask_seed == NO_DROPOUT {
        model.forward_eval(x)
    } else {
        model.forward_train(x, &mut rng::stream(mask_seed, &[tag::DROPOUT]))
    }
}

const NO_DROPOUT: u64 = u64::MAX;

fn mean_loss(model: &ModelParams, x: ArrayView3<'_, f64>, labels: &[usize], mask_seed: u64) -> Result<f64> {
    let (logits, _) = forward(model, x, mask_seed)?;
    let mut total = 0.0;
    for (row, &y) in logits.outer_iter().zip(labels) {
        total += cross_entropy(row, y)?.value;
    }
    Ok(total / labels.len() as f64)
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (d, &n) in shape.iter().enumerate().rev() {
        idx[d] = flat % n.max(1);
        flat /= n.max(1);
    }
    idx
}

struct Worst {
    err: f64,
    abs: f64,
    flat: usize,
    analytic: f64,
    numeric: f64,
}

fn group_report(name: String, shape: &[usize], n: usize, worst: Worst, tol: f64) -> GroupReport {
    GroupReport {
        group: name,
        coordinates: n,
        max_rel_error: worst.err,
        max_abs_error: worst.abs,
        worst_index: unravel(worst.flat, shape),
        worst_analytic: worst.analytic,
        worst_numeric: worst.numeric,
        passed: worst.err < tol,
    }
}

/// Compares `grad_fn` against central differences of the mean batch loss for
/// every parameter tensor and for the input.
pub fn check_gradients(
    model: &ModelParams,
    x: ArrayView3<'_, f64>,
    labels: &[usize],
    cfg: &GradCheckConfig,
    mask_seed: u64,
    grad_fn: &GradientFn<'_>,
) -> Result<GradCheckReport> {
    let mask_seed = if cfg.dropout { mask_seed & !(1 << 63) } else { NO_DROPOUT };
    let grads = grad_fn(model, x, labels, mask_seed)?;
    let h = cfg.h;
    let mut probe = model.clone();
    let mut groups = Vec::new();

    let analytic: Vec<(String, Vec<usize>, Vec<f64>)> = grads
        .params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape, t.data.to_vec()))
        .collect();
    for (ti, (name, shape, a)) in analytic.into_iter().enumerate() {
        let mut worst = Worst { err: -1.0, abs: 0.0, flat: 0, analytic: 0.0, numeric: 0.0 };
        for (j, &aj) in a.iter().enumerate() {
            let orig = probe.tensors()[ti].data[j];
            probe.tensors_mut()[ti].data[j] = orig + h;
            let plus = mean_loss(&probe, x, labels, mask_seed)?;
            probe.tensors_mut()[ti].data[j] = orig - h;
            let minus = mean_loss(&probe, x, labels, mask_seed)?;
            probe.tensors_mut()[ti].data[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(aj, numeric);
            worst.abs = worst.abs.max((aj - numeric).abs());
            if err > worst.err {
                worst = Worst { err, flat: j, analytic: aj, numeric, ..worst };
            }
        }
        groups.push(group_report(name, &shape, a.len(), worst, cfg.tolerance));
    }

    let mut xp = x.to_owned();
    let shape = xp.shape().to_vec();
    let mut worst = Worst { err: -1.0, abs: 0.0, flat: 0, analytic: 0.0, numeric: 0.0 };
    let input_grad: Vec<f64> = grads.input.iter().copied().collect();
    for (j, &aj) in input_grad.iter().enumerate() {
        let slot = xp.as_slice_mut().expect("owned input is contiguous");
        let orig = slot[j];
        slot[j] = orig + h;
        let plus = mean_loss(model, xp.view(), labels, mask_seed)?;
        xp.as_slice_mut().unwrap()[j] = orig - h;
        let minus = mean_loss(model, xp.view(), labels, mask_seed)?;
        xp.as_slice_mut().unwrap()[j] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(aj, numeric);
        worst.abs = worst.abs.max((aj - numeric).abs());
        if err > worst.err {
            worst = Worst { err, flat: j, analytic: aj, numeric, ..worst };
        }
    }
    groups.push(group_report("input".into(), &shape, input_grad.len(), worst, cfg.tolerance));

    let passed = groups.iter().all(|g| g.passed);
    Ok(GradCheckReport {
        h,
        precision: "f64".into(),
        tolerance: cfg.tolerance,
        groups,
        passed,
    })
}

/// Random model, inputs and labels for `model_cfg`, all derived from `seed`.
///
/// Consequents are redrawn at unit scale; the small initial consequents
/// would otherwise push upstream gradients down to the finite-difference
/// noise floor.
pub fn random_instance(
    model_cfg: &ModelConfig,
    batch: usize,
    seed: u64,
) -> Result<(ModelParams, Array3<f64>, Vec<usize>)> {
    let mut model = ModelParams::init(*model_cfg, rng::derive_seed(seed, &[tag::INIT]))?;
    let mut r = rng::stream(seed, &[tag::SAMPLER]);
    for f in model.spatial.iter_mut().chain(model.temporal.iter_mut()) {
        match &mut f.consequent {
            Consequent::ZeroOrder(u) => u.mapv_inplace(|_| StandardNormal.sample(&mut r)),
            Consequent::FirstOrder(v) => {
                let d = v.shape()[1];
                for ((_, i, j), e) in v.indexed_iter_mut() {
                    let noise: f64 = StandardNormal.sample(&mut r);
                    *e = if i == j { 1.0 } else { 0.0 } + 0.3 * noise / (d as f64).sqrt();
                }
            }
        }
    }
    let x = Array3::from_shape_fn((batch, model_cfg.channels, model_cfg.samples), |_| {
        StandardNormal.sample(&mut r)
    });
    let labels = (0..batch).map(|_| r.random_range(0..model_cfg.classes)).collect();
    Ok((model, x, labels))
}

/// Full suite on a fresh random instance using the model's own backward pass.
pub fn run_gradcheck(model_cfg: &ModelConfig, cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let (model, x, labels) = random_instance(model_cfg, cfg.batch, seed)?;
    check_gradients(&model, x.view(), &labels, cfg, seed, &analytic_gradients)
}

/// The small configuration the suite runs on by default.
pub fn default_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(4, 32, 4);
    cfg.rules = 3;
    cfg.hidden = 8;
    cfg
}
