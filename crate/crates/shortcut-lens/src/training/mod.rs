//! The adversarial min-max training loop.
//!
//! Each step runs one shared forward pass and routes it into two
//! objectives: the feature extractor and task head descend the pretext
//! loss on lens-processed inputs (optionally concatenated with the raw
//! inputs), while the lens descends an adversarial term plus a scaled
//! pixel reconstruction penalty, with the extractor and head held
//! constant. Both parameter updates are computed from the same pre-step
//! parameters and applied together ("synchronous" updates).
//!
//! All batch construction and augmentation randomness is derived from
//! `(seed, epoch, step)` alone, so a run is bit-reproducible and a resumed
//! run continues exactly where the interrupted one left off.

mod fgsm;
mod losses;
mod run;
mod schedule;
mod step;
mod sweep;

pub use fgsm::fgsm_perturb;
pub use losses::{
    adversarial_pair, classification_accuracy, least_likely_targets, reconstruction_loss,
    ssl_loss, triplet_satisfaction,
};
pub use run::{
    apply_shortcut, jigsaw_perms, latest_checkpoint, read_metrics, run_training, MetricsRecord,
    RunSummary,
};
pub use schedule::{lr_schedule, ScheduleSpec};
pub use step::{load_train_state, save_train_state, train_step, StepOutcome, TrainState};
pub use sweep::{sweep_lambda, sweep_point_dir, SweepData, SweepOutcome};

use crate::dataio::{AugmentConfig, ShortcutConfig};
use crate::error::{Error, Result};
use crate::models::{FeatureExtractorConfig, LensConfig};
use crate::nn::AdamConfig;
use crate::pretext::{ExemplarAugConfig, PatchTaskConfig, Task};

/// Parameter-store ids used on the shared autodiff graph; backward passes
/// select which networks receive gradients by these ids.
pub(crate) const STORE_EXTRACTOR: usize = 0;
pub(crate) const STORE_LENS: usize = 1;
pub(crate) const STORE_HEAD: usize = 2;

/// How running batch-norm statistics blend per step:
/// running <- m * running + (1 - m) * batch.
pub(crate) const BN_MOMENTUM: f64 = 0.9;

/// Lens objective selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialMode {
    /// Lens minimizes the negated pretext loss.
    Full,
    /// Lens minimizes cross-entropy toward each example's currently
    /// least-probable class (classification tasks only).
    LeastLikely,
    /// No lens training; the lens stays at its identity initialization.
    None,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarialConfig {
    pub mode: AdversarialMode,
    /// Reconstruction penalty scale in the lens objective
    /// `L_lens = L_adv + lambda * L_rec`.
    pub lambda: f64,
    /// Feed the raw batch alongside the lensed batch to the extractor
    /// (ignored for the exemplar task, which always trains on lensed
    /// inputs only).
    pub feed_raw: bool,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            mode: AdversarialMode::Full,
            lambda: 1.0,
            feed_raw: true,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::config(format!(
                "adversarial lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Single-step input-gradient perturbation training (the non-lens
/// mitigation baseline).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FgsmConfig {
    /// Scale of the per-image perturbation draw: each image moves by
    /// |TruncNormal(0, epsilon; cut at +-2 epsilon)| along the sign of its
    /// input gradient. Typical scales: 0.01 to 0.16.
    pub epsilon: f64,
}

impl Default for FgsmConfig {
    fn default() -> Self {
        FgsmConfig { epsilon: 0.08 }
    }
}

impl FgsmConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::config(format!(
                "fgsm epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Full description of one training run. Every field has a desk-scale
/// default so a config file only needs to name what it changes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    /// Source images drawn per step; pretext construction may expand this
    /// (4x for rotation, `exemplar_copies`x for exemplar).
    pub batch_size: usize,
    pub base_lr: f64,
    /// Linear learning-rate warmup span, in epochs (may be fractional).
    pub warmup_epochs: f64,
    /// Fraction of total steps after which the linear decay to zero begins.
    pub plateau_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub adversarial: AdversarialConfig,
    /// Input-gradient perturbation baseline; only valid with
    /// `adversarial.mode = "none"` (the two mitigations are alternatives).
    pub fgsm: Option<FgsmConfig>,
    pub extractor: FeatureExtractorConfig,
    pub lens: LensConfig,
    /// Synthetic shortcut injected into each source batch before pretext
    /// construction (and, by the evaluation driver, into probe data).
    pub shortcut: Option<ShortcutConfig>,
    /// Write a checkpoint every this many epochs (0 = final epoch only).
    pub checkpoint_every: usize,
    pub exemplar_copies: usize,
    pub exemplar_margin: f64,
    pub exemplar_aug: ExemplarAugConfig,
    /// Patch extraction/augmentation shared by the relative-patch and
    /// jigsaw tasks.
    pub patch: PatchTaskConfig,
    pub jigsaw_grid: usize,
    pub jigsaw_permutations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Rotation,
            epochs: 10,
            batch_size: 32,
            base_lr: 1e-3,
            warmup_epochs: 1.0,
            plateau_fraction: 0.8,
            adam: AdamConfig::default(),
            seed: 0,
            adversarial: AdversarialConfig::default(),
            fgsm: None,
            extractor: FeatureExtractorConfig::desk(),
            lens: LensConfig::flat(32),
            shortcut: None,
            checkpoint_every: 0,
            exemplar_copies: 4,
            exemplar_margin: 0.5,
            exemplar_aug: ExemplarAugConfig::default(),
            // 30/32 of a 32-px image divides evenly into a 3x3 grid.
            patch: PatchTaskConfig {
                region_fraction: 0.9375,
                augment: AugmentConfig::default(),
            },
            jigsaw_grid: 3,
            jigsaw_permutations: 24,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be >= 2"));
        }
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !self.warmup_epochs.is_finite() || self.warmup_epochs < 0.0 {
            return Err(Error::config("warmup_epochs must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.plateau_fraction) {
            return Err(Error::config("plateau_fraction must lie in [0, 1]"));
        }
        if self.warmup_epochs > self.plateau_fraction * self.epochs as f64 {
            return Err(Error::config(format!(
                "warmup ({} epochs) extends past the decay start ({} of {} epochs)",
                self.warmup_epochs,
                self.plateau_fraction * self.epochs as f64,
                self.epochs
            )));
        }
        self.adversarial.validate()?;
        if let Some(f) = &self.fgsm {
            f.validate()?;
            if self.adversarial.mode != AdversarialMode::None {
                return Err(Error::config(
                    "fgsm training requires adversarial.mode = \"none\"; the \
                     perturbation baseline and the lens are alternative mitigations",
                ));
            }
        }
        if self.adversarial.mode == AdversarialMode::LeastLikely && self.task == Task::Exemplar {
            return Err(Error::Unsupported(
                "least_likely adversarial mode needs a classification task; \
                 exemplar trains by triplet loss"
                    .to_string(),
            ));
        }
        self.extractor.validate()?;
        self.lens.validate()?;
        if let Some(s) = &self.shortcut {
            s.validate()?;
        }
        if self.exemplar_copies < 2 {
            return Err(Error::config("exemplar_copies must be >= 2"));
        }
        if !self.exemplar_margin.is_finite() || self.exemplar_margin <= 0.0 {
            return Err(Error::config("exemplar_margin must be > 0"));
        }
        self.exemplar_aug.validate()?;
        self.patch.validate()?;
        if !(2..=3).contains(&self.jigsaw_grid) {
            return Err(Error::config("jigsaw_grid must be 2 or 3"));
        }
        if self.jigsaw_permutations < 2 {
            return Err(Error::config("jigsaw_permutations must be >= 2"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn fgsm_with_lens_training_is_rejected() {
        let cfg = TrainConfig {
            fgsm: Some(FgsmConfig::default()),
            ..TrainConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.is_config(), "got {err}");
        let ok = TrainConfig {
            fgsm: Some(FgsmConfig::default()),
            adversarial: AdversarialConfig {
                mode: AdversarialMode::None,
                ..AdversarialConfig::default()
            },
            ..TrainConfig::default()
        };
        ok.validate().unwrap();
    }

    #[test]
    fn least_likely_exemplar_is_unsupported() {
        let cfg = TrainConfig {
            task: Task::Exemplar,
            adversarial: AdversarialConfig {
                mode: AdversarialMode::LeastLikely,
                ..AdversarialConfig::default()
            },
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate().unwrap_err(), Error::Unsupported(_)));
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"lamda": 3.0}"#).unwrap_err();
        assert!(err.to_string().contains("lamda"));
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let cfg = TrainConfig {
            adversarial: AdversarialConfig {
                lambda: -1.0,
                ..AdversarialConfig::default()
            },
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
