//! Linear warmup followed by cosine decay, stepped per epoch.

use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{Error, Result};

/// Batch-size-scaled learning rate: `base_lr · (2 · batch_size) / 256`.
pub fn effective_lr(base_lr: f64, batch_size: usize) -> f64 {
    base_lr * (batch_size as f64 * 2.0) / 256.0
}

pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.max_epochs {
        return Err(Error::Contract(format!(
            "epoch {epoch} outside schedule of {} epochs",
            cfg.max_epochs
        )));
    }
    let eff = effective_lr(cfg.base_lr, cfg.batch_size);
    let warmup = cfg.warmup_epochs;
    if epoch < warmup {
        return Ok(eff * (epoch + 1) as f64 / warmup as f64);
    }
    let progress = (epoch - warmup) as f64 / (cfg.max_epochs - warmup) as f64;
    Ok(0.5 * eff * (1.0 + (PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(warmup: usize, max: usize) -> TrainConfig {
        TrainConfig {
            base_lr: 1e-3,
            batch_size: 256,
            warmup_epochs: warmup,
            max_epochs: max,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn effective_lr_examples() {
        assert_eq!(effective_lr(1e-3, 128), 1e-3);
        assert_eq!(effective_lr(1e-3, 256), 2e-3);
        assert!((effective_lr(5e-4, 64) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn warmup_terminus_and_midpoint() {
        let c = cfg(40, 800);
        let eff = effective_lr(c.base_lr, c.batch_size);
        assert_eq!(lr_at_epoch(&c, 39).unwrap(), eff);
        assert_eq!(lr_at_epoch(&c, 40 + 380).unwrap(), eff / 2.0);
        assert_eq!(lr_at_epoch(&c, 0).unwrap(), eff / 40.0);
    }

    #[test]
    fn final_epoch_value() {
        let c = cfg(10, 100);
        let v = lr_at_epoch(&c, 99).unwrap();
        let expected = 2e-3 * 0.5 * (1.0 + (89.0 * PI / 90.0).cos());
        assert!((v - expected).abs() < 1e-18);
        assert!((v - 6.09e-7).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_epoch() {
        assert!(lr_at_epoch(&cfg(10, 100), 100).is_err());
    }

    #[test]
    fn no_warmup_starts_at_peak() {
        let c = cfg(0, 10);
        assert_eq!(lr_at_epoch(&c, 0).unwrap(), 2e-3);
    }

    #[test]
    fn continuity_at_warmup_boundary() {
        for (w, m) in [(5, 50), (40, 800), (1, 3)] {
            let c = cfg(w, m);
            let eff = effective_lr(c.base_lr, c.batch_size);
            let jump = (lr_at_epoch(&c, w).unwrap() - lr_at_epoch(&c, w - 1).unwrap()).abs();
            assert!(jump <= eff / w as f64);
        }
    }
}
