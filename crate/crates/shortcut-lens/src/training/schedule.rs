//! Piecewise-linear learning-rate schedule: ramp from zero, hold, decay
//! to zero.

use crate::error::{Error, Result};

use super::TrainConfig;

/// Step-indexed schedule breakpoints. `warmup_steps <= decay_start <=
/// total_steps`; the rate is `base * step / warmup_steps` during warmup,
/// `base` on the plateau, `base * (total - step) / (total - decay_start)`
/// during decay, and zero at or beyond `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScheduleSpec {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub decay_start: u64,
    pub total_steps: u64,
}

impl ScheduleSpec {
    /// Derive step breakpoints from an epoch-denominated config.
    pub fn from_config(cfg: &TrainConfig, steps_per_epoch: usize) -> Result<Self> {
        if steps_per_epoch == 0 {
            return Err(Error::config("schedule needs at least one step per epoch"));
        }
        let spe = steps_per_epoch as f64;
        let total_steps = (cfg.epochs * steps_per_epoch) as u64;
        let warmup_steps = (cfg.warmup_epochs * spe).round() as u64;
        let decay_start = (cfg.plateau_fraction * total_steps as f64).round() as u64;
        let spec = ScheduleSpec {
            base_lr: cfg.base_lr,
            warmup_steps,
            decay_start: decay_start.clamp(warmup_steps, total_steps),
            total_steps,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::config("schedule base_lr must be > 0"));
        }
        if self.total_steps == 0 {
            return Err(Error::config("schedule must cover at least one step"));
        }
        if self.warmup_steps > self.decay_start || self.decay_start > self.total_steps {
            return Err(Error::config(format!(
                "schedule breakpoints must be ordered: warmup {} <= decay start {} <= total {}",
                self.warmup_steps, self.decay_start, self.total_steps
            )));
        }
        Ok(())
    }
}

/// Learning rate at `step` (0-based). Exact at breakpoints: zero at step
/// 0 (when a warmup exists), exactly `base_lr` at the end of warmup and
/// at the decay start, and zero at `total_steps`.
pub fn lr_schedule(step: u64, spec: &ScheduleSpec) -> f64 {
    if step >= spec.total_steps {
        return 0.0;
    }
    if step < spec.warmup_steps {
        return spec.base_lr * step as f64 / spec.warmup_steps as f64;
    }
    if step < spec.decay_start {
        return spec.base_lr;
    }
    spec.base_lr * (spec.total_steps - step) as f64 / (spec.total_steps - spec.decay_start) as f64
}
