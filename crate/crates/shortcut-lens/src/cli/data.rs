//! Dataset acquisition for the commands: load the configured source,
//! trim it, and reproduce the training-time shortcut on probe data.

use std::path::Path;

use crate::dataio::{
    load_cifar10, load_image_folder, FolderConfig, LabeledDataset, Split,
};
use crate::error::{Error, Result};
use crate::training::apply_shortcut;
use crate::util::derive_seed;

use super::config::{DataKind, Resolved};

/// Load one split of the configured dataset, generating the synthetic
/// source on first use and applying the configured size limit.
pub fn load_split(resolved: &Resolved, split: Split) -> Result<LabeledDataset> {
    let data = &resolved.cfg.data;
    let mut ds = match data.kind {
        DataKind::Cifar10 => load_cifar10(&data.resolve_root()?, split)?,
        DataKind::SyntheticShapes => {
            let dir = resolved.out_dir.join("data-synth");
            if !dir.join("test_batch.bin").is_file() {
                crate::dataio::synth::write_shape_dataset(
                    &dir,
                    data.synthetic_train,
                    data.synthetic_test,
                    data.synthetic_seed,
                )?;
            }
            load_cifar10(&dir, split)?
        }
        DataKind::Folder => {
            let root = data.resolve_root()?;
            let sub = match split {
                Split::Train => root.join("train"),
                Split::Test => root.join("test"),
            };
            load_folder_split(&sub, resolved.cfg.train.extractor.input_size)?
        }
    };
    let limit = match split {
        Split::Train => data.train_limit,
        Split::Test => data.test_limit,
    };
    if let Some(k) = limit {
        ds = truncate(ds, k);
    }
    let side = ds.images.data.shape()[1];
    let want = resolved.cfg.train.extractor.input_size;
    if side != want {
        return Err(Error::config(format!(
            "dataset images are {side}px but the extractor expects {want}px"
        )));
    }
    Ok(ds)
}

pub fn load_folder_split(dir: &Path, side: usize) -> Result<LabeledDataset> {
    load_image_folder(
        dir,
        &dir.join("labels.csv"),
        &FolderConfig {
            resize: Some(side),
            ..FolderConfig::default()
        },
    )
}

fn truncate(ds: LabeledDataset, k: usize) -> LabeledDataset {
    if k >= ds.images.n() {
        return ds;
    }
    let idx: Vec<usize> = (0..k).collect();
    LabeledDataset {
        images: ds.images.select(&idx),
        labels: ds.labels[..k].to_vec(),
        class_count: ds.class_count,
        texture_labels: ds.texture_labels.map(|t| t[..k].to_vec()),
    }
}

/// The split as the downstream probe should see it: with the same
/// synthetic cue the pretraining pipeline injected, reproduced at the
/// configured probability from a split-specific seed.
pub fn probe_split(resolved: &Resolved, split: Split) -> Result<LabeledDataset> {
    let ds = load_split(resolved, split)?;
    let Some(shortcut) = &resolved.cfg.train.shortcut else {
        return Ok(ds);
    };
    let tag = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let seed = derive_seed(resolved.cfg.train.seed, &["eval-shortcut", tag]);
    let images = apply_shortcut(&ds.images, shortcut, seed)?;
    Ok(LabeledDataset {
        images,
        labels: ds.labels,
        class_count: ds.class_count,
        texture_labels: ds.texture_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::ExperimentConfig;
    use crate::dataio::{ShortcutConfig, ShortcutKind};

    fn synth_resolved(dir: &Path) -> Resolved {
        let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
            "name": "data-test",
            "data": {
                "kind": "synthetic_shapes",
                "synthetic_train": 64,
                "synthetic_test": 32
            },
            "train": { "epochs": 1, "warmup_epochs": 0.0 }
        }))
        .unwrap();
        cfg.resolve(None, Some(dir.to_path_buf())).unwrap()
    }

    #[test]
    fn synthetic_source_is_generated_once_and_loads_both_splits() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = synth_resolved(dir.path());
        let train = load_split(&resolved, Split::Train).unwrap();
        let test = load_split(&resolved, Split::Test).unwrap();
        assert_eq!(train.images.n(), 64);
        assert_eq!(test.images.n(), 32);
        assert_eq!(train.class_count, 10);
        // second load reuses the files and reproduces content
        let again = load_split(&resolved, Split::Train).unwrap();
        assert_eq!(again.images.data, train.images.data);
    }

    #[test]
    fn limits_truncate_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let mut resolved = synth_resolved(dir.path());
        let full = load_split(&resolved, Split::Train).unwrap();
        resolved.cfg.data.train_limit = Some(10);
        let cut = load_split(&resolved, Split::Train).unwrap();
        assert_eq!(cut.images.n(), 10);
        assert_eq!(cut.labels, full.labels[..10]);
        assert_eq!(
            cut.images.data,
            full.images.select(&(0..10).collect::<Vec<_>>()).data
        );
    }

    #[test]
    fn probe_split_reproduces_the_training_cue() {
        let dir = tempfile::tempdir().unwrap();
        let mut resolved = synth_resolved(dir.path());
        resolved.cfg.train.shortcut = Some(ShortcutConfig {
            kind: ShortcutKind::Arrow,
            ..ShortcutConfig::default()
        });
        let plain = load_split(&resolved, Split::Test).unwrap();
        let a = probe_split(&resolved, Split::Test).unwrap();
        let b = probe_split(&resolved, Split::Test).unwrap();
        assert_eq!(a.images.data, b.images.data, "injection is seeded");
        assert_ne!(a.images.data, plain.images.data, "cue actually lands");
        assert_eq!(a.labels, plain.labels);
    }

    #[test]
    fn probe_split_without_shortcut_is_the_plain_split() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = synth_resolved(dir.path());
        let plain = load_split(&resolved, Split::Test).unwrap();
        let probe = probe_split(&resolved, Split::Test).unwrap();
        assert_eq!(plain.images.data, probe.images.data);
    }
}
