//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::fuzzy::SIGMA_FLOOR;
use crate::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Per-tensor moment estimates, in the parameter visiting order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<P: Parameters>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.data.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// One update `θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ)`, then fuzzy widths
/// (tensors named `*.widths`) are clamped to [`SIGMA_FLOOR`].
pub fn adamw_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    let grad_views = grads.tensors();
    for g in &grad_views {
        if let Some(i) = g.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in `{}` at flat index {i}",
                g.name
            )));
        }
    }
    let mut param_views = params.tensors_mut();
    if param_views.len() != grad_views.len() {
        return Err(Error::Contract("gradient structure differs from parameters".into()));
    }
    if state.first.is_empty() {
        state.first = grad_views.iter().map(|g| vec![0.0; g.data.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != param_views.len() {
        return Err(Error::Contract("optimizer state belongs to another model".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in param_views.iter_mut().zip(&grad_views).enumerate() {
        if p.data.len() != g.data.len() || p.name != g.name {
            return Err(Error::Contract(format!(
                "gradient `{}` does not match parameter `{}`",
                g.name, p.name
            )));
        }
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..p.data.len() {
            let gj = g.data[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let theta = p.data[j];
            p.data[j] = theta - lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta);
        }
        if p.name.ends_with(".widths") {
            p.data.iter_mut().for_each(|s| *s = s.max(SIGMA_FLOOR));
        }
    }
    Ok(())
}
