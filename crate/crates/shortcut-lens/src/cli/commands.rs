//! The four commands, as library functions so tests can drive them
//! without a process boundary. The binary maps their errors onto exit
//! codes (configuration problems → 2, runtime failures → 1).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::analysis::{lens_difference, mean_recon_map, render_panel, ReconStats};
use crate::dataio::Split;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_probe, extract_representations, shape_bias_score, train_linear_probe, FeatureMatrix,
    LinearProbe, ReprMode, ShapeBias,
};
use crate::models::lens_apply;
use crate::training::{
    latest_checkpoint, load_train_state, run_training, sweep_lambda, AdversarialMode, RunSummary,
    SweepData, TrainConfig, TrainState,
};

use super::config::{write_atomic, Resolved};
use super::data::{load_folder_split, load_split, probe_split};

/// Everything a finished run leaves behind, written atomically as
/// `record.json`. The embedded config snapshot reproduces the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub name: String,
    pub config: serde_json::Value,
    pub out_dir: PathBuf,
    pub steps: u64,
    pub steps_per_epoch: usize,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub mean_rec_final_epoch: Option<f64>,
    pub wall_seconds: f64,
    pub finished: bool,
    /// Summary of the last evaluation of this run, if any.
    #[serde(default)]
    pub eval: Option<serde_json::Value>,
}

impl ExperimentRecord {
    pub fn path(out_dir: &Path) -> PathBuf {
        out_dir.join("record.json")
    }

    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = Self::path(out_dir);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::DataFormat {
            path,
            detail: format!("bad record: {e}"),
        })
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&Self::path(out_dir), text.as_bytes())
    }
}

/// Accuracy report one evaluation produces, written as
/// `eval/report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub mode: ReprMode,
    pub top1: f64,
    pub per_class: Vec<Option<f64>>,
    pub train_examples: usize,
    pub test_examples: usize,
    pub shape_bias: Option<ShapeBias>,
    pub wall_seconds: f64,
}

/// Files `analyze` writes.
#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeOutputs {
    pub panel: PathBuf,
    pub mean_map: PathBuf,
    pub stats_dir: PathBuf,
    pub per_image_mean: f64,
}

/// Train the configured model, or return the existing record untouched
/// when `resume` finds the run already complete.
pub fn cmd_train(resolved: &Resolved, resume: bool) -> Result<ExperimentRecord> {
    if resume {
        if let Ok(record) = ExperimentRecord::load(&resolved.out_dir) {
            if record.finished {
                return Ok(record);
            }
        }
    }
    resolved.write_snapshot()?;
    let started = Instant::now();
    let train = load_split(resolved, Split::Train)?;
    let summary = run_training(
        &resolved.cfg.train,
        &train.images,
        &resolved.out_dir,
        resume,
        None,
    )?;
    let record = ExperimentRecord {
        name: resolved.cfg.name.clone(),
        config: serde_json::to_value(&resolved.cfg)?,
        out_dir: resolved.out_dir.clone(),
        steps: summary.steps,
        steps_per_epoch: summary.steps_per_epoch,
        final_checkpoint: summary.final_checkpoint.clone(),
        metrics_path: summary.metrics_path.clone(),
        mean_rec_final_epoch: summary.mean_rec_final_epoch,
        wall_seconds: started.elapsed().as_secs_f64(),
        finished: true,
        eval: None,
    };
    record.save(&resolved.out_dir)?;
    Ok(record)
}

/// Locate the checkpoint to operate on: an explicit path, or the newest
/// one under the experiment directory.
fn resolve_checkpoint(resolved: &Resolved, explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        if !p.join("checkpoint.json").is_file() {
            return Err(Error::Checkpoint(format!(
                "{} does not contain a checkpoint",
                p.display()
            )));
        }
        return Ok(p.to_path_buf());
    }
    latest_checkpoint(&resolved.out_dir)
        .map(|(_, p)| p)
        .ok_or_else(|| {
            Error::Checkpoint(format!(
                "no checkpoints under {}; train first or pass --checkpoint",
                resolved.out_dir.display()
            ))
        })
}

/// The sha256 of a checkpoint's parameter blob, read from its manifest.
fn checkpoint_sha(dir: &Path) -> Result<String> {
    let path = dir.join("checkpoint.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::DataFormat {
        path: path.clone(),
        detail: format!("bad manifest: {e}"),
    })?;
    v.get("blob_sha256")
        .and_then(|s| s.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Checkpoint(format!("{}: manifest has no blob hash", path.display())))
}

/// A run whose adversarial mode is `none` never trained its lens; treat
/// it as lens-free for lens-consuming commands.
fn require_lens(cfg: &TrainConfig, what: &str) -> Result<()> {
    if cfg.adversarial.mode == AdversarialMode::None {
        return Err(Error::config(format!(
            "{what} needs a lens, but this run trained with adversarial.mode = \"none\""
        )));
    }
    Ok(())
}

fn load_state(resolved: &Resolved, checkpoint: &Path) -> Result<TrainState> {
    load_train_state(checkpoint, &resolved.cfg.train)
}

/// Extract features for both probe splits in the configured mode.
fn probe_features(
    resolved: &Resolved,
    state: &TrainState,
    checkpoint_id: &str,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let mode = resolved.cfg.eval.mode;
    let lens = match mode {
        ReprMode::ConcatLensed => {
            require_lens(&resolved.cfg.train, "concat_lensed evaluation")?;
            Some(&state.lens)
        }
        _ => None,
    };
    let train = probe_split(resolved, Split::Train)?;
    let test = probe_split(resolved, Split::Test)?;
    let f_train = extract_representations(
        &state.extractor,
        lens,
        &train.images,
        &train.labels,
        train.class_count,
        mode,
        checkpoint_id,
    )?;
    let f_test = extract_representations(
        &state.extractor,
        lens,
        &test.images,
        &test.labels,
        test.class_count,
        mode,
        checkpoint_id,
    )?;
    Ok((f_train, f_test))
}

fn maybe_shape_bias(
    resolved: &Resolved,
    state: &TrainState,
    probe: &LinearProbe,
) -> Result<Option<ShapeBias>> {
    let Some(dir) = &resolved.cfg.eval.cueconflict else {
        return Ok(None);
    };
    let ds = load_folder_split(dir, resolved.cfg.train.extractor.input_size)?;
    let mode = resolved.cfg.eval.mode;
    let lens = match mode {
        ReprMode::ConcatLensed => Some(&state.lens),
        _ => None,
    };
    shape_bias_score(&state.extractor, lens, mode, probe, &ds).map(Some)
}

/// Train a probe on frozen features of the configured checkpoint and
/// report test accuracy (plus shape bias when a cue-conflict set is
/// configured). Writes `eval/report.json` and mirrors the summary into
/// the experiment record when one exists.
pub fn cmd_eval(resolved: &Resolved, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let started = Instant::now();
    let ck = resolve_checkpoint(resolved, checkpoint)?;
    let sha = checkpoint_sha(&ck)?;
    let state = load_state(resolved, &ck)?;
    let (f_train, f_test) = probe_features(resolved, &state, &format!("{}", ck.display()))?;
    let probe = train_linear_probe(&f_train, &resolved.cfg.eval.probe)?;
    let result = evaluate_probe(&probe, &f_test)?;
    let shape_bias = maybe_shape_bias(resolved, &state, &probe)?;
    let report = EvalReport {
        checkpoint: ck,
        checkpoint_sha256: sha,
        mode: resolved.cfg.eval.mode,
        top1: result.top1,
        per_class: result.per_class,
        train_examples: f_train.len(),
        test_examples: f_test.len(),
        shape_bias,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let eval_dir = resolved.out_dir.join("eval");
    fs::create_dir_all(&eval_dir).map_err(|e| Error::io(&eval_dir, e))?;
    write_atomic(
        &eval_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    if let Ok(mut record) = ExperimentRecord::load(&resolved.out_dir) {
        record.eval = Some(serde_json::json!({
            "mode": report.mode,
            "top1": report.top1,
            "checkpoint_sha256": report.checkpoint_sha256,
        }));
        record.save(&resolved.out_dir)?;
    }
    Ok(report)
}

/// Render what the lens does: difference panels, the mean residual map
/// (PNG plus raw stats), and the per-image loss CSV.
pub fn cmd_analyze(resolved: &Resolved, checkpoint: Option<&Path>) -> Result<AnalyzeOutputs> {
    require_lens(&resolved.cfg.train, "analysis")?;
    let ck = resolve_checkpoint(resolved, checkpoint)?;
    let state = load_state(resolved, &ck)?;
    let settings = &resolved.cfg.analysis;
    let test = probe_split(resolved, Split::Test)?;
    let stats = mean_recon_map(
        &state.lens,
        &test.images,
        settings.sample_count.min(test.images.n()),
        settings.clip_percentile,
        settings.seed,
    )?;

    let out = resolved.out_dir.join("analysis");
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let stats_dir = out.join("stats");
    stats.save(&stats_dir)?;

    // Panel: the first rows of the sampled subset, so the figure and the
    // stats describe the same images.
    let rows_n = settings.panel_rows.min(stats.ids.len());
    let subset = test.images.select(&stats.ids[..rows_n]);
    let lensed = lens_apply(&state.lens, &subset)?;
    let (diff, _) = lens_difference(&subset, &lensed)?;
    let rows: Vec<_> = (0..rows_n)
        .map(|i| {
            (
                subset.data.index_axis(Axis(0), i).to_owned(),
                lensed.data.index_axis(Axis(0), i).to_owned(),
                diff.index_axis(Axis(0), i).to_owned(),
            )
        })
        .collect();
    let panel = out.join("panel.png");
    render_panel(&rows, &panel, settings.gain)?;

    let mean_map = out.join("mean_map.png");
    render_map_png(&stats, &mean_map)?;

    Ok(AnalyzeOutputs {
        panel,
        mean_map,
        stats_dir,
        per_image_mean: stats.per_image_mean(),
    })
}

/// Grayscale rendering of the display-clipped mean residual map,
/// normalized so the clip value is white. An all-zero map stays black.
fn render_map_png(stats: &ReconStats, path: &Path) -> Result<()> {
    let display = stats.display_map();
    let max = display.iter().cloned().fold(0.0f64, f64::max);
    let (h, w) = display.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let v = if max > 0.0 { display[(r, c)] / max } else { 0.0 };
            img.put_pixel(c as u32, r as u32, image::Luma([(v * 255.0).round() as u8]));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Outcome of a reconstruction-weight sweep plus where its table landed.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub table: PathBuf,
    pub best_lambda: f64,
    pub best_accuracy: f64,
    pub spearman_rec_lambda: Option<f64>,
    pub points: usize,
}

/// Train one run per reconstruction weight and probe each, writing
/// `sweep.csv` sorted by weight with the best row flagged.
pub fn cmd_sweep(resolved: &Resolved, lambdas: &[f64], resume: bool) -> Result<SweepReport> {
    require_lens(&resolved.cfg.train, "a reconstruction-weight sweep")?;
    resolved.write_snapshot()?;
    let train = load_split(resolved, Split::Train)?;
    let sweep_root = resolved.out_dir.join("sweep");

    let data = sweep_lambda(
        &resolved.cfg.train,
        lambdas,
        &train.images,
        &sweep_root,
        resume,
        |cfg_pt, summary: &RunSummary| {
            let state = load_train_state(&summary.final_checkpoint, cfg_pt)?;
            let point = point_resolved(resolved, cfg_pt);
            let (f_train, f_test) = probe_features(
                &point,
                &state,
                &format!("{}", summary.final_checkpoint.display()),
            )?;
            let probe = train_linear_probe(&f_train, &point.cfg.eval.probe)?;
            Ok(evaluate_probe(&probe, &f_test)?.top1)
        },
    )?;

    let table = resolved.out_dir.join("sweep.csv");
    write_sweep_csv(&data, &table)?;
    let best = data.best();
    Ok(SweepReport {
        table,
        best_lambda: best.lambda,
        best_accuracy: best.accuracy,
        spearman_rec_lambda: data.rec_lambda_spearman(),
        points: data.by_accuracy.len(),
    })
}

/// The experiment config as one sweep point sees it (its own training
/// settings, shared data and eval settings).
fn point_resolved(resolved: &Resolved, cfg_pt: &TrainConfig) -> Resolved {
    let mut point = resolved.clone();
    point.cfg.train = cfg_pt.clone();
    point
}

fn write_sweep_csv(data: &SweepData, path: &Path) -> Result<()> {
    let best_lambda = data.best().lambda;
    let mut rows = data.by_accuracy.clone();
    rows.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).expect("finite weights"));
    let mut csv = String::from("lambda,accuracy,final_recon_loss,best\n");
    for row in &rows {
        let rec = row
            .mean_rec_final_epoch
            .map(|v| format!("{v:e}"))
            .unwrap_or_default();
        writeln!(
            csv,
            "{},{},{},{}",
            row.lambda,
            row.accuracy,
            rec,
            row.lambda == best_lambda
        )
        .expect("string write");
    }
    write_atomic(path, csv.as_bytes())
}

/// Spawn one `train` child process per sweep point so points run
/// concurrently, then return once all have exited. Each child writes the
/// same per-point directory the in-process sweep uses, so a follow-up
/// `cmd_sweep(resume = true)` finds the finished runs and only evaluates.
pub fn spawn_sweep_points(resolved: &Resolved, lambdas: &[f64]) -> Result<()> {
    require_lens(&resolved.cfg.train, "a reconstruction-weight sweep")?;
    let sweep_root = resolved.out_dir.join("sweep");
    fs::create_dir_all(&sweep_root).map_err(|e| Error::io(&sweep_root, e))?;
    let exe = std::env::current_exe().map_err(|e| Error::io("current_exe", e))?;
    let mut children = Vec::new();
    for (i, &lambda) in lambdas.iter().enumerate() {
        let dir = crate::training::sweep_point_dir(&sweep_root, i, lambda);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut cfg = resolved.cfg.clone();
        cfg.name = format!("{}-lambda-{i:02}", cfg.name);
        cfg.train.adversarial.lambda = lambda;
        cfg.out_dir = Some(dir.clone());
        let cfg_path = dir.join("point-config.json");
        write_atomic(&cfg_path, serde_json::to_string_pretty(&cfg)?.as_bytes())?;
        let child = std::process::Command::new(&exe)
            .arg("train")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--resume")
            .spawn()
            .map_err(|e| Error::io(&exe, e))?;
        children.push((lambda, child));
    }
    for (lambda, mut child) in children {
        let status = child.wait().map_err(|e| Error::io("child wait", e))?;
        if !status.success() {
            return Err(Error::Config(format!(
                "sweep point lambda={lambda} failed with {status}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::ExperimentConfig;
    use crate::training::read_metrics;

    /// A deliberately tiny experiment: synthetic shapes, one epoch, small
    /// extractor, so command round-trips stay fast.
    fn tiny_experiment(dir: &Path, extra: serde_json::Value) -> Resolved {
        let mut v = serde_json::json!({
            "name": "cmd-test",
            "data": {
                "kind": "synthetic_shapes",
                "synthetic_train": 64,
                "synthetic_test": 48
            },
            "train": {
                "epochs": 1,
                "batch_size": 16,
                "warmup_epochs": 0.0,
                "extractor": { "width_factor": 1, "block_counts": [1, 1, 1], "input_size": 32 },
                "lens": { "variant": "flat", "base_channels": 4 },
                "adversarial": { "mode": "full", "lambda": 1.0 }
            },
            "eval": {
                "mode": "concat_lensed",
                "probe": { "epochs": 3 }
            },
            "analysis": { "sample_count": 8, "panel_rows": 2 }
        });
        merge(&mut v, extra);
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        cfg.resolve(None, Some(dir.to_path_buf())).unwrap()
    }

    fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
        match (base, patch) {
            (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
                for (k, v) in p {
                    merge(b.entry(k).or_insert(serde_json::Value::Null), v);
                }
            }
            (b, p) => *b = p,
        }
    }

    #[test]
    fn train_eval_analyze_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = tiny_experiment(dir.path(), serde_json::json!({}));

        let record = cmd_train(&resolved, false).unwrap();
        assert!(record.finished);
        assert_eq!(record.steps, 4); // 64 images / 16 per step, 1 epoch
        assert!(record.final_checkpoint.join("checkpoint.json").is_file());
        assert!(record.metrics_path.is_file());
        assert!(dir.path().join("config.snapshot").is_file());
        let metrics = read_metrics(&record.metrics_path).unwrap();
        assert_eq!(metrics.len(), 4);

        let report = cmd_eval(&resolved, None).unwrap();
        assert!(report.top1 >= 0.0 && report.top1 <= 1.0);
        assert_eq!(report.test_examples, 48);
        assert!(!report.checkpoint_sha256.is_empty());
        assert!(dir.path().join("eval/report.json").is_file());
        // record picked up the eval summary
        let record = ExperimentRecord::load(dir.path()).unwrap();
        assert!(record.eval.is_some());

        let outputs = cmd_analyze(&resolved, None).unwrap();
        assert!(outputs.panel.is_file());
        assert!(outputs.mean_map.is_file());
        assert!(outputs.stats_dir.join("stats.csv").is_file());
        let panel = image::open(&outputs.panel).unwrap().to_rgb8();
        // 2 rows of 32px: 3*32 + 2*2 wide, 2*32 + 2 tall
        assert_eq!((panel.width(), panel.height()), (100, 66));
    }

    #[test]
    fn resume_of_a_finished_run_is_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = tiny_experiment(dir.path(), serde_json::json!({}));
        let first = cmd_train(&resolved, false).unwrap();
        let metrics_before = fs::read_to_string(&first.metrics_path).unwrap();
        let again = cmd_train(&resolved, true).unwrap();
        assert_eq!(again.steps, first.steps);
        assert_eq!(again.wall_seconds, first.wall_seconds, "record returned unchanged");
        let metrics_after = fs::read_to_string(&first.metrics_path).unwrap();
        assert_eq!(metrics_before, metrics_after);
    }

    #[test]
    fn identical_runs_produce_identical_metrics_files() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = tiny_experiment(dir_a.path(), serde_json::json!({}));
        let b = tiny_experiment(dir_b.path(), serde_json::json!({}));
        let ra = cmd_train(&a, false).unwrap();
        let rb = cmd_train(&b, false).unwrap();
        let ma = fs::read_to_string(&ra.metrics_path).unwrap();
        let mb = fs::read_to_string(&rb.metrics_path).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn eval_without_a_checkpoint_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = tiny_experiment(dir.path(), serde_json::json!({}));
        let err = cmd_eval(&resolved, None).unwrap_err();
        assert!(!err.is_config(), "missing checkpoint exits 1, not 2");
    }

    #[test]
    fn concat_eval_of_a_lensless_run_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = tiny_experiment(
            dir.path(),
            serde_json::json!({
                "train": { "adversarial": { "mode": "none" } }
            }),
        );
        cmd_train(&resolved, false).unwrap();
        let err = cmd_eval(&resolved, None).unwrap_err();
        assert!(err.is_config());
        let err = cmd_analyze(&resolved, None).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn analyze_of_identity_lens_reports_zero_loss() {
        // Train zero steps of lens change: adversarial mode full but with
        // an untouched lens is impossible after training, so instead
        // check the map/panel path on a fresh checkpoint written by a
        // 1-step run with an enormous reconstruction weight, which keeps
        // the lens near identity but not exactly. The exact-zero contract
        // is covered in the analysis unit tests; here we only check the
        // artifacts exist and the CSV matches the stats.
        let dir = tempfile::tempdir().unwrap();
        let resolved = tiny_experiment(dir.path(), serde_json::json!({}));
        cmd_train(&resolved, false).unwrap();
        let outputs = cmd_analyze(&resolved, None).unwrap();
        let stats = ReconStats::load(&outputs.stats_dir).unwrap();
        assert_eq!(stats.ids.len(), 8);
        assert!((stats.per_image_mean() - outputs.per_image_mean).abs() < 1e-12);
        // panel rows honored
        let panel = image::open(&outputs.panel).unwrap().to_rgb8();
        assert_eq!(panel.height(), 66);
    }

    #[test]
    fn sweep_writes_ascending_table_with_best_flag() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = tiny_experiment(
            dir.path(),
            serde_json::json!({
                "data": { "synthetic_train": 32, "synthetic_test": 32 },
                "train": { "batch_size": 16 }
            }),
        );
        let report = cmd_sweep(&resolved, &[1.0, 0.1], false).unwrap();
        assert_eq!(report.points, 2);
        let csv = fs::read_to_string(&report.table).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "lambda,accuracy,final_recon_loss,best");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.1,"), "{csv}");
        assert!(lines[2].starts_with("1,"), "{csv}");
        let best_rows = lines[1..].iter().filter(|l| l.ends_with("true")).count();
        assert_eq!(best_rows, 1, "{csv}");
        // reproducible under the same seed: rerun fresh elsewhere
        let dir2 = tempfile::tempdir().unwrap();
        let resolved2 = tiny_experiment(
            dir2.path(),
            serde_json::json!({
                "data": { "synthetic_train": 32, "synthetic_test": 32 },
                "train": { "batch_size": 16 }
            }),
        );
        let report2 = cmd_sweep(&resolved2, &[1.0, 0.1], false).unwrap();
        let csv2 = fs::read_to_string(&report2.table).unwrap();
        assert_eq!(csv, csv2);
    }

    #[test]
    fn sweep_rejects_lensless_mode() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = tiny_experiment(
            dir.path(),
            serde_json::json!({
                "train": { "adversarial": { "mode": "none" } }
            }),
        );
        assert!(cmd_sweep(&resolved, &[0.1], false).unwrap_err().is_config());
    }
}
