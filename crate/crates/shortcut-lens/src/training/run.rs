//! Full training runs: epoch/step loop, metrics log, checkpoint cadence,
//! resume.
//!
//! Every source of randomness — epoch shuffles, shortcut application
//! masks, pretext augmentation, perturbation draws — is derived from the
//! config seed plus position (epoch, step), never from ambient state.
//! Rerunning a config reproduces the metrics log byte for byte, and a
//! resumed run continues exactly where the checkpoint left off.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::dataio::{inject_arrow, inject_chromatic, ImageBatch, ShortcutConfig, ShortcutKind};
use crate::error::{Error, Result};
use crate::pretext::{
    make_exemplar_batch, make_jigsaw_batch, make_relpatch_batch, make_rotation_batch,
    select_permutation_subset, PermutationSet, PretextBatch, Task,
};
use crate::util::{derive_rng, derive_seed};

use super::schedule::{lr_schedule, ScheduleSpec};
use super::step::{load_train_state, save_train_state, train_step, TrainState};
use super::TrainConfig;

/// One metrics line per training step, serialized as JSON. Optional losses
/// render as `null` when the run trains no lens.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss_ssl: f64,
    pub loss_adv: Option<f64>,
    pub loss_rec: Option<f64>,
    pub task_accuracy: f64,
}

/// What a finished (or step-limited) invocation produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    /// Global steps completed so far (across resumes).
    pub steps: u64,
    pub steps_per_epoch: usize,
    /// Directory of the checkpoint written when this invocation stopped.
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    /// Last metrics record this invocation wrote (absent only when the
    /// run had already finished and nothing was left to do).
    pub last: Option<MetricsRecord>,
    /// Mean reconstruction loss over the final epoch's records; absent
    /// when the run trains no lens.
    pub mean_rec_final_epoch: Option<f64>,
}

/// Apply the configured shortcut to a source batch in its canonical form
/// (upright arrow, plain chromatic gradient), masking examples by the
/// configured application probability. The cue carries no information
/// until a pretext transformation moves it.
pub fn apply_shortcut(batch: &ImageBatch, cfg: &ShortcutConfig, seed: u64) -> Result<ImageBatch> {
    if cfg.kind == ShortcutKind::None {
        return Ok(batch.clone());
    }
    cfg.validate()?;
    let n = batch.n();
    let chosen: Vec<usize> = if cfg.apply_probability >= 1.0 {
        (0..n).collect()
    } else {
        let mut rng = derive_rng(seed, &["shortcut-mask"]);
        (0..n)
            .filter(|_| rng.random_range(0.0..1.0) < cfg.apply_probability)
            .collect()
    };
    if chosen.is_empty() {
        return Ok(batch.clone());
    }
    let subset = batch.select(&chosen);
    let injected = match cfg.kind {
        ShortcutKind::Arrow => inject_arrow(&subset, cfg, &vec![0; chosen.len()])?,
        ShortcutKind::Chromatic => inject_chromatic(&subset, cfg)?,
        ShortcutKind::None => unreachable!(),
    };
    let mut out = batch.clone();
    for (j, &i) in chosen.iter().enumerate() {
        out.data
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&injected.data.index_axis(ndarray::Axis(0), j));
    }
    Ok(out)
}

/// Build the pretext batch for one (epoch, step) slot. Pure function of
/// its arguments: the source rows are taken from the epoch's shuffle, the
/// shortcut is injected into the sources, and the task transformation then
/// carries any injected cue.
pub(crate) fn build_step_batch(
    cfg: &TrainConfig,
    images: &ImageBatch,
    perms: Option<&PermutationSet>,
    epoch: usize,
    step_in_epoch: usize,
) -> Result<PretextBatch> {
    let n = images.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(cfg.seed, &["epoch-order", &epoch.to_string()]);
    // Fisher-Yates with explicit draws so the shuffle is pinned to our
    // seed-derivation scheme alone.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let lo = step_in_epoch * cfg.batch_size;
    let rows = &order[lo..lo + cfg.batch_size];
    let mut src = images.select(rows);
    if let Some(sc) = &cfg.shortcut {
        let seed = derive_seed(
            cfg.seed,
            &["shortcut", &epoch.to_string(), &step_in_epoch.to_string()],
        );
        src = apply_shortcut(&src, sc, seed)?;
    }
    let batch_seed = derive_seed(
        cfg.seed,
        &["batch", &epoch.to_string(), &step_in_epoch.to_string()],
    );
    match cfg.task {
        Task::Rotation => make_rotation_batch(&src),
        Task::Exemplar => {
            make_exemplar_batch(&src, cfg.exemplar_copies, &cfg.exemplar_aug, batch_seed)
        }
        Task::Relpatch => make_relpatch_batch(&src, &cfg.patch, batch_seed),
        Task::Jigsaw => make_jigsaw_batch(
            &src,
            perms.expect("jigsaw runs build a permutation set"),
            &cfg.patch,
            batch_seed,
        ),
    }
}

/// The jigsaw permutation subset a config denotes; deterministic in the
/// config seed, so training and evaluation agree on class meanings.
pub fn jigsaw_perms(cfg: &TrainConfig) -> Result<PermutationSet> {
    select_permutation_subset(
        cfg.jigsaw_permutations,
        cfg.jigsaw_grid,
        derive_seed(cfg.seed, &["jigsaw-perms"]),
    )
}

fn checkpoint_dir(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step-{step:08}"))
}

/// Most recent checkpoint under `out_dir/checkpoints`, by step number.
pub fn latest_checkpoint(out_dir: &Path) -> Option<(u64, PathBuf)> {
    let dir = out_dir.join("checkpoints");
    let entries = fs::read_dir(&dir).ok()?;
    let mut best: Option<(u64, PathBuf)> = None;
    for e in entries.flatten() {
        let name = e.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name.strip_prefix("step-") {
            if let Ok(step) = num.parse::<u64>() {
                if best.as_ref().is_none_or(|(b, _)| step > *b) {
                    best = Some((step, e.path()));
                }
            }
        }
    }
    best
}

/// Parse a metrics log back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::DataFormat {
                path: path.to_path_buf(),
                detail: format!("bad metrics line: {e}"),
            })
        })
        .collect()
}

/// Train per `cfg` on `images`, writing `metrics.jsonl` and periodic
/// checkpoints under `out_dir`.
///
/// With `resume` set, continues from the latest checkpoint in `out_dir`
/// (fresh start when none exists); otherwise any previous metrics log is
/// replaced. `limit` caps the number of global steps for this invocation
/// (a checkpoint is always written at the stopping point), letting long
/// runs proceed in installments.
pub fn run_training(
    cfg: &TrainConfig,
    images: &ImageBatch,
    out_dir: &Path,
    resume: bool,
    limit: Option<u64>,
) -> Result<RunSummary> {
    cfg.validate()?;
    let n = images.n();
    if n < cfg.batch_size {
        return Err(Error::config(format!(
            "dataset has {n} images, smaller than one batch of {}",
            cfg.batch_size
        )));
    }
    let spe = n / cfg.batch_size;
    let spec = ScheduleSpec::from_config(cfg, spe)?;
    let total_steps = spec.total_steps;
    let perms = match cfg.task {
        Task::Jigsaw => Some(jigsaw_perms(cfg)?),
        _ => None,
    };

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.jsonl");

    let mut state = if resume {
        match latest_checkpoint(out_dir) {
            Some((_, dir)) => load_train_state(&dir, cfg)?,
            None => TrainState::new(cfg)?,
        }
    } else {
        TrainState::new(cfg)?
    };

    // Reconcile the metrics log with the state we are starting from: keep
    // exactly the records before the current step so the final file is
    // identical to an uninterrupted run's.
    let mut kept_lines: Vec<String> = Vec::new();
    if resume && metrics_path.exists() {
        for rec_line in fs::read_to_string(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?
            .lines()
        {
            if rec_line.trim().is_empty() {
                continue;
            }
            let rec: MetricsRecord = serde_json::from_str(rec_line).map_err(|e| {
                Error::DataFormat {
                    path: metrics_path.clone(),
                    detail: format!("bad metrics line: {e}"),
                }
            })?;
            if rec.step < state.step {
                kept_lines.push(rec_line.to_string());
            }
        }
    }
    let tmp = metrics_path.with_extension("jsonl.tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for l in &kept_lines {
            writeln!(w, "{l}").map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, &metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let file = fs::OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut log = BufWriter::new(file);

    let stop_at = limit
        .map(|l| state.step.saturating_add(l))
        .unwrap_or(total_steps)
        .min(total_steps);

    let mut last: Option<MetricsRecord> = None;
    let mut final_dir = checkpoint_dir(out_dir, state.step);
    let mut stopped = state.step >= stop_at;
    if stopped && latest_checkpoint(out_dir).is_none() {
        // Degenerate invocation (limit 0 on a fresh run): still leave a
        // loadable checkpoint behind.
        save_train_state(&state, cfg, &final_dir)?;
    }
    while state.step < stop_at {
        let epoch = (state.step / spe as u64) as usize;
        let step_in_epoch = (state.step % spe as u64) as usize;
        let batch = build_step_batch(cfg, images, perms.as_ref(), epoch, step_in_epoch)?;
        let lr = lr_schedule(state.step, &spec);
        let out = train_step(&mut state, &batch, cfg, lr)?;
        let rec = MetricsRecord {
            step: out.step,
            epoch,
            lr: out.lr,
            loss_ssl: out.loss_ssl,
            loss_adv: out.loss_adv,
            loss_rec: out.loss_rec,
            task_accuracy: out.task_accuracy,
        };
        let line = serde_json::to_string(&rec)?;
        writeln!(log, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        last = Some(rec);

        let epoch_done = step_in_epoch + 1 == spe;
        let run_done = state.step == total_steps;
        let limit_hit = state.step == stop_at;
        let cadence = cfg.checkpoint_every > 0
            && epoch_done
            && (epoch + 1) % cfg.checkpoint_every == 0;
        if run_done || limit_hit || cadence {
            log.flush().map_err(|e| Error::io(&metrics_path, e))?;
            final_dir = checkpoint_dir(out_dir, state.step);
            save_train_state(&state, cfg, &final_dir)?;
        }
        if run_done {
            stopped = true;
        }
    }
    log.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let _ = stopped;

    // Mean reconstruction loss over the last fully recorded epoch.
    let mean_rec_final_epoch = if state.step >= spe as u64 {
        let records = read_metrics(&metrics_path)?;
        let last_epoch = records.iter().map(|r| r.epoch).max().unwrap_or(0);
        let recs: Vec<f64> = records
            .iter()
            .filter(|r| r.epoch == last_epoch)
            .filter_map(|r| r.loss_rec)
            .collect();
        if recs.is_empty() {
            None
        } else {
            Some(recs.iter().sum::<f64>() / recs.len() as f64)
        }
    } else {
        None
    };

    Ok(RunSummary {
        steps: state.step,
        steps_per_epoch: spe,
        final_checkpoint: final_dir,
        metrics_path,
        last,
        mean_rec_final_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::noise_batch;
    use crate::models::{FeatureExtractorConfig, LensConfig};
    use crate::training::{AdversarialConfig, AdversarialMode};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 2,
            warmup_epochs: 0.0,
            extractor: FeatureExtractorConfig {
                width_factor: 1,
                block_counts: vec![1],
                input_size: 8,
                ..FeatureExtractorConfig::desk()
            },
            lens: LensConfig::flat(4),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_epoch_ten_steps_writes_ten_records_and_a_checkpoint() {
        let cfg = tiny_cfg();
        let images = noise_batch(20, 8, 5, false);
        let dir = tempfile::tempdir().unwrap();
        let summary = run_training(&cfg, &images, dir.path(), false, None).unwrap();
        assert_eq!(summary.steps, 10);
        assert_eq!(summary.steps_per_epoch, 10);
        let records = read_metrics(&summary.metrics_path).unwrap();
        assert_eq!(records.len(), 10);
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.step, i as u64);
            assert_eq!(r.epoch, 0);
            assert!(r.loss_ssl.is_finite());
            assert!(r.loss_rec.is_some(), "default mode trains the lens");
        }
        assert!(summary.final_checkpoint.ends_with("checkpoints/step-00000010"));
        assert!(summary.final_checkpoint.join("checkpoint.json").exists());
        assert!(summary.mean_rec_final_epoch.is_some());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = tiny_cfg();
        let images = noise_batch(8, 8, 6, false);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run_training(&cfg, &images, d1.path(), false, None).unwrap();
        run_training(&cfg, &images, d2.path(), false, None).unwrap();
        let m1 = std::fs::read(d1.path().join("metrics.jsonl")).unwrap();
        let m2 = std::fs::read(d2.path().join("metrics.jsonl")).unwrap();
        assert!(!m1.is_empty());
        assert_eq!(m1, m2);
    }

    #[test]
    fn interrupted_and_resumed_run_matches_uninterrupted() {
        let cfg = TrainConfig {
            epochs: 2,
            ..tiny_cfg()
        };
        let images = noise_batch(8, 8, 7, false);
        let whole = tempfile::tempdir().unwrap();
        run_training(&cfg, &images, whole.path(), false, None).unwrap();

        let parts = tempfile::tempdir().unwrap();
        // First installment: one epoch's worth of steps, then stop.
        let s1 = run_training(&cfg, &images, parts.path(), false, Some(4)).unwrap();
        assert_eq!(s1.steps, 4);
        // Second installment resumes from the checkpoint.
        let s2 = run_training(&cfg, &images, parts.path(), true, None).unwrap();
        assert_eq!(s2.steps, 8);

        let a = std::fs::read(whole.path().join("metrics.jsonl")).unwrap();
        let b = std::fs::read(parts.path().join("metrics.jsonl")).unwrap();
        assert_eq!(a, b, "resumed metrics must match the uninterrupted run");
    }

    #[test]
    fn mode_none_logs_null_lens_losses() {
        let cfg = TrainConfig {
            adversarial: AdversarialConfig {
                mode: AdversarialMode::None,
                ..AdversarialConfig::default()
            },
            ..tiny_cfg()
        };
        let images = noise_batch(4, 8, 8, false);
        let dir = tempfile::tempdir().unwrap();
        let summary = run_training(&cfg, &images, dir.path(), false, None).unwrap();
        let records = read_metrics(&summary.metrics_path).unwrap();
        assert!(records.iter().all(|r| r.loss_adv.is_none() && r.loss_rec.is_none()));
        assert!(summary.mean_rec_final_epoch.is_none());
        let text = std::fs::read_to_string(&summary.metrics_path).unwrap();
        assert!(text.lines().next().unwrap().contains("\"loss_adv\":null"));
    }

    #[test]
    fn shortcut_mask_probability_in_training_spans_subset() {
        let cfg = ShortcutConfig {
            apply_probability: 0.5,
            ..ShortcutConfig::arrow()
        };
        let images = noise_batch(400, 32, 9, false);
        let out = apply_shortcut(&images, &cfg, 77).unwrap();
        let changed = (0..images.n())
            .filter(|&i| {
                out.data.index_axis(ndarray::Axis(0), i)
                    != images.data.index_axis(ndarray::Axis(0), i)
            })
            .count();
        assert!(
            (120..=280).contains(&changed),
            "about half the images should carry the cue, got {changed}/400"
        );
        // Same seed, same mask; different seed, (almost surely) different.
        let again = apply_shortcut(&images, &cfg, 77).unwrap();
        assert_eq!(out.data, again.data);
    }

    #[test]
    fn full_probability_marks_every_image() {
        let cfg = ShortcutConfig::arrow();
        let images = noise_batch(6, 32, 10, false);
        let out = apply_shortcut(&images, &cfg, 1).unwrap();
        for i in 0..6 {
            assert_ne!(
                out.data.index_axis(ndarray::Axis(0), i),
                images.data.index_axis(ndarray::Axis(0), i)
            );
        }
    }
}
