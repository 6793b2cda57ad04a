//! The experiment file: one JSON document that pins everything a run
//! needs, validated in full before any compute starts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ProbeConfig, ReprMode};
use crate::training::TrainConfig;

/// Environment variable consulted for the dataset root when the config
/// leaves `data.root` unset.
pub const DATA_ENV: &str = "SHORTCUT_LENS_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// CIFAR-10 binary batches under the root directory.
    Cifar10,
    /// Self-generated labeled shape images in the CIFAR binary layout,
    /// written under the experiment directory on first use.
    SyntheticShapes,
    /// A folder of image files with a `labels.csv` per split
    /// (`train/`, `test/` subdirectories).
    Folder,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Dataset root; falls back to `SHORTCUT_LENS_DATA` when unset.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Keep only the first N training images after loading.
    #[serde(default)]
    pub train_limit: Option<usize>,
    /// Keep only the first N test images after loading.
    #[serde(default)]
    pub test_limit: Option<usize>,
    /// Image count for the generated training split (synthetic_shapes).
    #[serde(default = "default_synth_train")]
    pub synthetic_train: usize,
    /// Image count for the generated test split (synthetic_shapes).
    #[serde(default = "default_synth_test")]
    pub synthetic_test: usize,
    /// Seed for the generated splits (synthetic_shapes).
    #[serde(default = "default_synth_seed")]
    pub synthetic_seed: u64,
}

fn default_synth_train() -> usize {
    2000
}
fn default_synth_test() -> usize {
    500
}
fn default_synth_seed() -> u64 {
    7
}

impl DataConfig {
    /// Directory the loaders read from: explicit root, else the
    /// environment default.
    pub fn resolve_root(&self) -> Result<PathBuf> {
        if let Some(r) = &self.root {
            return Ok(r.clone());
        }
        match std::env::var_os(DATA_ENV) {
            Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
            _ => Err(Error::config(format!(
                "data.root is unset and {DATA_ENV} is not defined"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == DataKind::SyntheticShapes {
            if self.synthetic_train == 0 || self.synthetic_test == 0 {
                return Err(Error::config(
                    "synthetic splits must have at least one image",
                ));
            }
        } else {
            // Loading real data needs a resolvable root; check now so the
            // failure happens before any compute.
            self.resolve_root()?;
        }
        if self.train_limit == Some(0) || self.test_limit == Some(0) {
            return Err(Error::config("data limits must be positive when set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Representation layout fed to the probe.
    pub mode: ReprMode,
    pub probe: ProbeConfig,
    /// Optional cue-conflict dataset (images plus a
    /// `filename,shape_label,texture_label` CSV) for shape-bias scoring.
    pub cueconflict: Option<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            mode: ReprMode::Duplicate,
            probe: ProbeConfig::default(),
            cueconflict: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    /// Images sampled for the mean residual map.
    pub sample_count: usize,
    /// Display clip for map renderings.
    pub clip_percentile: f64,
    /// Examples shown in the panel figure.
    pub panel_rows: usize,
    /// Multiplier applied to difference images before rendering.
    pub gain: f32,
    /// Seed for the deterministic image subset.
    pub seed: u64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            sample_count: 256,
            clip_percentile: 95.0,
            panel_rows: 8,
            gain: 5.0,
            seed: 11,
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::config("analysis.sample_count must be positive"));
        }
        if self.panel_rows == 0 {
            return Err(Error::config("analysis.panel_rows must be positive"));
        }
        if self.panel_rows > self.sample_count {
            return Err(Error::config(format!(
                "analysis.panel_rows ({}) cannot exceed analysis.sample_count ({})",
                self.panel_rows, self.sample_count
            )));
        }
        if !(0.0..=100.0).contains(&self.clip_percentile) {
            return Err(Error::config(format!(
                "analysis.clip_percentile must be in [0, 100], got {}",
                self.clip_percentile
            )));
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(Error::config(format!(
                "analysis.gain must be positive, got {}",
                self.gain
            )));
        }
        Ok(())
    }
}

/// One experiment, fully specified. Unknown keys anywhere in the file
/// are rejected so a typo cannot silently fall back to a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Global seed; when set it replaces every per-section seed so one
    /// number pins the whole run. The `--seed` flag sets it.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Where outputs land; `--out` overrides, default `runs/<name>`.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
}

impl ExperimentConfig {
    /// Parse and fully validate an experiment file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Apply command-line overrides and propagate the global seed, then
    /// validate every section.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Resolved> {
        if let Some(s) = seed {
            self.seed = Some(s);
        }
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.eval.probe.seed = s;
            self.analysis.seed = s;
        }
        let out_dir = out
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name));
        self.out_dir = Some(out_dir.clone());
        self.validate()?;
        Ok(Resolved { cfg: self, out_dir })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("experiment name must be non-empty"));
        }
        if self
            .name
            .chars()
            .any(|c| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'))
        {
            return Err(Error::config(format!(
                "experiment name {:?} may only contain [A-Za-z0-9_-] (it names directories)",
                self.name
            )));
        }
        self.data.validate()?;
        self.train.validate()?;
        self.eval.probe.validate()?;
        self.analysis.validate()?;
        Ok(())
    }
}

/// A validated configuration plus the directory everything writes to.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
}

impl Resolved {
    /// Write the resolved config next to the outputs it produced.
    pub fn write_snapshot(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join("config.snapshot");
        let text = serde_json::to_string_pretty(&self.cfg)?;
        write_atomic(&path, text.as_bytes())
    }
}

/// Write via a temp file and rename so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "name": "demo",
            "data": { "kind": "synthetic_shapes" },
            "train": { "epochs": 1, "warmup_epochs": 0.0 }
        })
    }

    #[test]
    fn minimal_config_parses_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        fs::write(&path, minimal_json().to_string()).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        let resolved = cfg.resolve(None, None).unwrap();
        assert_eq!(resolved.out_dir, PathBuf::from("runs/demo"));
        assert_eq!(resolved.cfg.train.epochs, 1);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        let mut bad = minimal_json();
        bad["train"]["lamda"] = serde_json::json!(0.5);
        fs::write(&path, bad.to_string()).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn global_seed_reaches_every_section() {
        let cfg: ExperimentConfig = serde_json::from_value(minimal_json()).unwrap();
        let resolved = cfg.resolve(Some(99), None).unwrap();
        assert_eq!(resolved.cfg.seed, Some(99));
        assert_eq!(resolved.cfg.train.seed, 99);
        assert_eq!(resolved.cfg.eval.probe.seed, 99);
        assert_eq!(resolved.cfg.analysis.seed, 99);
    }

    #[test]
    fn flag_seed_beats_config_seed() {
        let mut v = minimal_json();
        v["seed"] = serde_json::json!(5);
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        let resolved = cfg.resolve(Some(6), None).unwrap();
        assert_eq!(resolved.cfg.train.seed, 6);
    }

    #[test]
    fn out_flag_beats_config_out_dir() {
        let mut v = minimal_json();
        v["out_dir"] = serde_json::json!("/tmp/from-config");
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        let resolved = cfg
            .clone()
            .resolve(None, Some(PathBuf::from("/tmp/from-flag")))
            .unwrap();
        assert_eq!(resolved.out_dir, PathBuf::from("/tmp/from-flag"));
        let resolved = cfg.resolve(None, None).unwrap();
        assert_eq!(resolved.out_dir, PathBuf::from("/tmp/from-config"));
    }

    #[test]
    fn bad_section_values_fail_validation_before_compute() {
        let mut v = minimal_json();
        v["analysis"] = serde_json::json!({ "panel_rows": 10, "sample_count": 4 });
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        let err = cfg.resolve(None, None).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("panel_rows"), "{err}");
    }

    #[test]
    fn weird_experiment_names_are_rejected() {
        let mut v = minimal_json();
        v["name"] = serde_json::json!("../escape");
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.resolve(None, None).unwrap_err().is_config());
    }

    #[test]
    fn missing_root_for_real_data_is_a_config_error() {
        let mut v = minimal_json();
        v["data"] = serde_json::json!({ "kind": "cifar10" });
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        // The env var may be set in some sandboxes; only assert when the
        // fallback is genuinely absent.
        if std::env::var_os(DATA_ENV).is_none() {
            assert!(cfg.resolve(None, None).unwrap_err().is_config());
        }
    }
}
