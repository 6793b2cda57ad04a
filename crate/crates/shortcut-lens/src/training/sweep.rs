//! Reconstruction-weight sweeps: train one model per weight, score each
//! with a caller-supplied evaluation, and report outcomes ranked by
//! downstream accuracy.

use std::path::{Path, PathBuf};

use crate::dataio::ImageBatch;
use crate::error::{Error, Result};
use crate::util::spearman;

use super::run::{run_training, RunSummary};
use super::TrainConfig;

/// One sweep point: the reconstruction weight, the downstream accuracy
/// the evaluator assigned, and the run's final-epoch reconstruction loss.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepOutcome {
    pub lambda: f64,
    pub accuracy: f64,
    pub mean_rec_final_epoch: Option<f64>,
    pub out_dir: PathBuf,
}

/// All sweep points, ranked by accuracy (best first; equal accuracies
/// order by ascending weight).
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepData {
    pub by_accuracy: Vec<SweepOutcome>,
}

impl SweepData {
    pub fn best(&self) -> &SweepOutcome {
        &self.by_accuracy[0]
    }

    /// Rank correlation between the reconstruction weight and the final
    /// mean reconstruction loss across the sweep. A strongly negative
    /// value confirms that heavier penalties pin the lens closer to the
    /// identity. `None` with fewer than two usable points or constant
    /// inputs.
    pub fn rec_lambda_spearman(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .by_accuracy
            .iter()
            .filter_map(|o| o.mean_rec_final_epoch.map(|r| (o.lambda, r)))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        spearman(&xs, &ys)
    }
}

/// Directory a sweep point trains in. Shared with drivers that run
/// points in separate processes, so both sides agree on the layout.
pub fn sweep_point_dir(out_root: &Path, index: usize, lambda: f64) -> PathBuf {
    out_root.join(format!("lambda-{index:02}-{lambda}"))
}

/// Train one model per reconstruction weight in `values` (all other
/// settings shared), each in its own subdirectory of `out_root`, and
/// score it with `evaluate`. Runs resume: a sweep interrupted midway
/// picks up where it stopped when invoked again with `resume` set.
pub fn sweep_lambda<E>(
    cfg: &TrainConfig,
    values: &[f64],
    images: &ImageBatch,
    out_root: &Path,
    resume: bool,
    mut evaluate: E,
) -> Result<SweepData>
where
    E: FnMut(&TrainConfig, &RunSummary) -> Result<f64>,
{
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one weight value"));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::config("sweep weights must be finite and >= 0"));
    }
    let mut outcomes = Vec::with_capacity(values.len());
    for (i, &lambda) in values.iter().enumerate() {
        let mut run_cfg = cfg.clone();
        run_cfg.adversarial.lambda = lambda;
        run_cfg.validate()?;
        let out_dir = sweep_point_dir(out_root, i, lambda);
        let summary = run_training(&run_cfg, images, &out_dir, resume, None)?;
        let accuracy = evaluate(&run_cfg, &summary)?;
        outcomes.push(SweepOutcome {
            lambda,
            accuracy,
            mean_rec_final_epoch: summary.mean_rec_final_epoch,
            out_dir,
        });
    }
    outcomes.sort_by(|a, b| {
        b.accuracy
            .partial_cmp(&a.accuracy)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.lambda.partial_cmp(&b.lambda).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(SweepData {
        by_accuracy: outcomes,
    })
}
