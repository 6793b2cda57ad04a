//! Deterministic feature extraction from a frozen extractor, optionally
//! through the lens, in the three layouts the probes compare.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, Axis, Ix2};

use crate::dataio::ImageBatch;
use crate::error::{Error, Result};
use crate::models::{
    load_checkpoint, save_checkpoint, FeatureExtractor, LensModel,
};
use crate::nn::{Graph, StoreNodes};
use crate::pretext::PatchTaskConfig;

/// Fixed extraction chunk so results never depend on how a dataset is
/// split across forward passes.
const CHUNK: usize = 64;

/// Representation layout fed to the probes. The lensed concatenation and
/// its duplicate control share one dimensionality by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprMode {
    /// `[F(L(x)); F(x)]` — lens view next to the raw view.
    ConcatLensed,
    /// `[F(x); F(x)]` — raw view twice, the fairness control with the
    /// same width as the concatenation.
    Duplicate,
    /// `F(x)` alone.
    Plain,
}

/// Where a feature matrix came from.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    /// Identifier of the checkpoint (or "fresh") the extractor came from.
    pub checkpoint: String,
    pub lens_used: bool,
    pub mode: ReprMode,
}

/// Frozen representations plus their class labels.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub provenance: Provenance,
}

impl FeatureMatrix {
    pub fn new(
        features: Array2<f32>,
        labels: Vec<usize>,
        class_count: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Shape("feature matrix needs at least one row".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l >= class_count) {
            return Err(Error::Shape(format!(
                "label outside [0, {class_count})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(
                "feature matrix contains non-finite values".into(),
            ));
        }
        Ok(FeatureMatrix {
            features,
            labels,
            class_count,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Persist as a checkpoint container (array "features") plus a
    /// `labels.csv` with header `index,label`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "feature_matrix",
            "class_count": self.class_count,
            "provenance": serde_json::to_value(&self.provenance)?,
        });
        save_checkpoint(
            dir,
            &meta,
            &[("features".to_string(), self.features.clone().into_dyn())],
        )?;
        let mut csv = String::from("index,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(csv, "{i},{l}").expect("string write");
        }
        let path = dir.join("labels.csv");
        let tmp = path.with_extension("csv.tmp");
        fs::write(&tmp, csv).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = load_checkpoint(dir)?;
        let features: Array2<f32> = ck
            .array("features")
            .ok_or_else(|| Error::Checkpoint("container has no features array".into()))?
            .view()
            .into_dimensionality::<Ix2>()
            .map_err(|e| Error::Checkpoint(format!("features array is not 2-D: {e}")))?
            .to_owned();
        let class_count = ck
            .meta
            .get("class_count")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint("missing class_count".into()))?
            as usize;
        let provenance: Provenance = serde_json::from_value(
            ck.meta
                .get("provenance")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing provenance".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("bad provenance: {e}")))?;
        let path = dir.join("labels.csv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut labels = Vec::with_capacity(features.nrows());
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line.trim() != "index,label" {
                    return Err(Error::DataFormat {
                        path,
                        detail: format!("bad labels header: {line:?}"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (idx, label) = line.split_once(',').ok_or_else(|| Error::DataFormat {
                path: path.clone(),
                detail: format!("bad labels line: {line:?}"),
            })?;
            let idx: usize = idx.trim().parse().map_err(|_| Error::DataFormat {
                path: path.clone(),
                detail: format!("bad index: {line:?}"),
            })?;
            if idx != labels.len() {
                return Err(Error::DataFormat {
                    path,
                    detail: format!("labels out of order at {line:?}"),
                });
            }
            labels.push(label.trim().parse().map_err(|_| Error::DataFormat {
                path: path.clone(),
                detail: format!("bad label: {line:?}"),
            })?);
        }
        FeatureMatrix::new(features, labels, class_count, provenance)
    }
}

const STORE_F: usize = 0;
const STORE_L: usize = 1;

/// Pre-logits representations of one chunk, optionally lensed first.
/// Inference mode throughout; nothing is mutated.
fn forward_chunk(
    extractor: &FeatureExtractor<f32>,
    lens: Option<&LensModel<f32>>,
    chunk: &ImageBatch,
) -> Result<Array2<f32>> {
    let mut g = Graph::<f32>::new();
    let mut nodes_f = StoreNodes::new(STORE_F, &extractor.params);
    let mut discard = Vec::new();
    let x = g.input(chunk.to_nchw().into_dyn(), false);
    let h = match lens {
        Some(l) => {
            let mut nodes_l = StoreNodes::new(STORE_L, &l.params);
            let (out, _residual) = l.forward(&mut g, &mut nodes_l, x, false, &mut discard)?;
            out
        }
        None => x,
    };
    let feats = extractor.forward_features(&mut g, &mut nodes_f, h, false, &mut discard);
    Ok(g.value(feats)
        .view()
        .into_dimensionality::<Ix2>()
        .expect("pre-logits are 2-D")
        .to_owned())
}

fn extract_plain(
    extractor: &FeatureExtractor<f32>,
    lens: Option<&LensModel<f32>>,
    images: &ImageBatch,
) -> Result<Array2<f32>> {
    let n = images.n();
    let mut rows: Option<Array2<f32>> = None;
    let mut lo = 0usize;
    while lo < n {
        let hi = (lo + CHUNK).min(n);
        let idx: Vec<usize> = (lo..hi).collect();
        let part = forward_chunk(extractor, lens, &images.select(&idx))?;
        let all = rows.get_or_insert_with(|| Array2::zeros((n, part.ncols())));
        all.slice_mut(s![lo..hi, ..]).assign(&part);
        lo = hi;
    }
    rows.ok_or_else(|| Error::Shape("cannot extract features from an empty batch".into()))
}

/// Representations of `images` under `mode`, raised against the frozen
/// extractor. Inputs are expected already preprocessed (sized and
/// center-cropped); extraction applies no augmentation, so repeated calls
/// are bit-identical.
pub fn extract_representations(
    extractor: &FeatureExtractor<f32>,
    lens: Option<&LensModel<f32>>,
    images: &ImageBatch,
    labels: &[usize],
    class_count: usize,
    mode: ReprMode,
    checkpoint_id: &str,
) -> Result<FeatureMatrix> {
    if images.n() == 0 {
        return Err(Error::Shape("cannot extract features from an empty batch".into()));
    }
    let features = match mode {
        ReprMode::Plain => extract_plain(extractor, None, images)?,
        ReprMode::Duplicate => {
            let f = extract_plain(extractor, None, images)?;
            ndarray::concatenate(Axis(1), &[f.view(), f.view()]).expect("same row count")
        }
        ReprMode::ConcatLensed => {
            let lens = lens.ok_or_else(|| {
                Error::config("concat_lensed extraction requires a lens")
            })?;
            let lensed = extract_plain(extractor, Some(lens), images)?;
            let raw = extract_plain(extractor, None, images)?;
            ndarray::concatenate(Axis(1), &[lensed.view(), raw.view()])
                .expect("same row count")
        }
    };
    FeatureMatrix::new(
        features,
        labels.to_vec(),
        class_count,
        Provenance {
            checkpoint: checkpoint_id.to_string(),
            lens_used: matches!(mode, ReprMode::ConcatLensed),
            mode,
        },
    )
}

/// Mean of the pre-logits representations of the non-augmented patches in
/// a `grid x grid` division of `image` (HWC). Matches the patch geometry
/// the patch-based pretext tasks train on.
pub fn patch_average_representation(
    extractor: &FeatureExtractor<f32>,
    image: &Array3<f32>,
    cfg: &PatchTaskConfig,
    grid: usize,
) -> Result<Array1<f32>> {
    let set = crate::dataio::extract_patch_grid(&image.view(), grid, cfg.region_fraction)?;
    let k = set.patches.len();
    let ps = set.patch_size;
    let mut stacked = ndarray::Array4::<f32>::zeros((k, ps, ps, 3));
    for (i, p) in set.patches.iter().enumerate() {
        stacked.index_axis_mut(Axis(0), i).assign(p);
    }
    let feats = forward_chunk(extractor, None, &ImageBatch::new(stacked))?;
    Ok(feats.mean_axis(Axis(0)).expect("at least one patch"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::noise_batch;
    use crate::models::{
        build_feature_extractor, build_lens, zero_matching, FeatureExtractorConfig, LensConfig,
    };
    use crate::pretext::PatchTaskConfig;

    fn tiny_extractor(seed: u64) -> FeatureExtractor<f32> {
        let cfg = FeatureExtractorConfig {
            width_factor: 1,
            block_counts: vec![1],
            input_size: 8,
            ..FeatureExtractorConfig::desk()
        };
        build_feature_extractor(&cfg, seed).unwrap()
    }

    #[test]
    fn duplicate_halves_are_bit_equal_and_dims_match_concat() {
        let f = tiny_extractor(31);
        let lens = build_lens::<f32>(&LensConfig::flat(4), 32).unwrap();
        let images = noise_batch(5, 8, 33, false);
        let labels = vec![0usize, 1, 2, 0, 1];
        let dup = extract_representations(
            &f, None, &images, &labels, 3, ReprMode::Duplicate, "t",
        )
        .unwrap();
        let cat = extract_representations(
            &f,
            Some(&lens),
            &images,
            &labels,
            3,
            ReprMode::ConcatLensed,
            "t",
        )
        .unwrap();
        let plain =
            extract_representations(&f, None, &images, &labels, 3, ReprMode::Plain, "t").unwrap();
        assert_eq!(dup.dim(), cat.dim());
        assert_eq!(dup.dim(), 2 * plain.dim());
        let d = plain.dim();
        for i in 0..5 {
            for j in 0..d {
                assert_eq!(dup.features[(i, j)].to_bits(), dup.features[(i, d + j)].to_bits());
                assert_eq!(dup.features[(i, j)].to_bits(), plain.features[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn identity_lens_concat_equals_duplicate_bitwise() {
        let f = tiny_extractor(41);
        let mut lens = build_lens::<f32>(&LensConfig::flat(4), 42).unwrap();
        // A freshly built lens is already the identity (zero final layer);
        // zero everything for belt and braces.
        zero_matching(&mut lens.params, "");
        let images = noise_batch(4, 8, 43, false);
        let labels = vec![0usize, 1, 0, 1];
        let cat = extract_representations(
            &f,
            Some(&lens),
            &images,
            &labels,
            2,
            ReprMode::ConcatLensed,
            "t",
        )
        .unwrap();
        let dup =
            extract_representations(&f, None, &images, &labels, 2, ReprMode::Duplicate, "t")
                .unwrap();
        assert_eq!(cat.features.len(), dup.features.len());
        for (a, b) in cat.features.iter().zip(dup.features.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn concat_mode_without_lens_is_a_config_error() {
        let f = tiny_extractor(51);
        let images = noise_batch(2, 8, 52, false);
        let err = extract_representations(
            &f,
            None,
            &images,
            &[0, 1],
            2,
            ReprMode::ConcatLensed,
            "t",
        )
        .unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn extraction_is_chunk_invariant_and_repeatable() {
        let f = tiny_extractor(61);
        // More images than one chunk to cross the boundary.
        let images = noise_batch(CHUNK + 7, 8, 62, false);
        let labels = vec![0usize; CHUNK + 7];
        let a = extract_representations(&f, None, &images, &labels, 1, ReprMode::Plain, "t")
            .unwrap();
        let b = extract_representations(&f, None, &images, &labels, 1, ReprMode::Plain, "t")
            .unwrap();
        assert_eq!(a.features, b.features);
        // Rows equal the single-image forward (chunking has no effect).
        let one = extract_representations(
            &f,
            None,
            &images.select(&[CHUNK + 3]),
            &[0],
            1,
            ReprMode::Plain,
            "t",
        )
        .unwrap();
        for j in 0..a.dim() {
            assert_eq!(
                a.features[(CHUNK + 3, j)].to_bits(),
                one.features[(0, j)].to_bits()
            );
        }
    }

    #[test]
    fn patch_average_is_order_invariant_and_right_sized() {
        let f = tiny_extractor(71);
        let cfg = PatchTaskConfig {
            region_fraction: 0.9375,
            ..PatchTaskConfig::default()
        };
        // Uniform image: every patch identical, so the average equals the
        // single-patch representation.
        let uniform = Array3::<f32>::from_elem((32, 32, 3), 0.25);
        let avg = patch_average_representation(&f, &uniform, &cfg, 3).unwrap();
        assert_eq!(avg.len(), 512);
        let set = crate::dataio::extract_patch_grid(&uniform.view(), 3, 0.9375).unwrap();
        let mut one = ndarray::Array4::<f32>::zeros((1, set.patch_size, set.patch_size, 3));
        one.index_axis_mut(Axis(0), 0).assign(&set.patches[0]);
        let single = forward_chunk(&f, None, &ImageBatch::new(one)).unwrap();
        for j in 0..avg.len() {
            assert!((avg[j] - single[(0, j)]).abs() < 1e-5);
        }
    }

    #[test]
    fn patch_average_ignores_patch_arrangement() {
        // A 30x30 image at region fraction 1.0 splits into nine exact
        // 10x10 tiles, so rearranging the tiles permutes the patch set
        // without changing its contents — the average must not move.
        let f = tiny_extractor(73);
        let cfg = PatchTaskConfig {
            region_fraction: 1.0,
            ..PatchTaskConfig::default()
        };
        let mut rng = crate::util::derive_rng(74, &["tiles"]);
        let tiles: Vec<Array3<f32>> = (0..9)
            .map(|_| {
                let mut t = Array3::<f32>::zeros((10, 10, 3));
                for v in t.iter_mut() {
                    *v = rand::Rng::random_range(&mut rng, -1.0..1.0);
                }
                t
            })
            .collect();
        let assemble = |order: &[usize]| {
            let mut img = Array3::<f32>::zeros((30, 30, 3));
            for (cell, &t) in order.iter().enumerate() {
                let (r, c) = (cell / 3, cell % 3);
                img.slice_mut(s![10 * r..10 * (r + 1), 10 * c..10 * (c + 1), ..])
                    .assign(&tiles[t]);
            }
            img
        };
        let a = patch_average_representation(
            &f,
            &assemble(&[0, 1, 2, 3, 4, 5, 6, 7, 8]),
            &cfg,
            3,
        )
        .unwrap();
        let b = patch_average_representation(
            &f,
            &assemble(&[8, 3, 5, 0, 7, 1, 4, 2, 6]),
            &cfg,
            3,
        )
        .unwrap();
        for j in 0..a.len() {
            assert!((a[j] - b[j]).abs() < 1e-5, "dim {j}: {} vs {}", a[j], b[j]);
        }
    }

    #[test]
    fn feature_matrix_round_trips_through_disk() {
        let f = tiny_extractor(81);
        let images = noise_batch(3, 8, 82, false);
        let m = extract_representations(
            &f,
            None,
            &images,
            &[2, 0, 1],
            3,
            ReprMode::Plain,
            "ck-demo",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feats");
        m.save(&path).unwrap();
        let back = FeatureMatrix::load(&path).unwrap();
        assert_eq!(back.labels, m.labels);
        assert_eq!(back.class_count, 3);
        assert_eq!(back.provenance, m.provenance);
        assert_eq!(back.features.mapv(f32::to_bits), m.features.mapv(f32::to_bits));
    }
}
