//! Reconstruction-residual statistics: how much the lens changes each
//! image, where, and how those quantities compare across runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array4, Axis, Ix2};

use crate::dataio::ImageBatch;
use crate::error::{Error, Result};
use crate::models::{load_checkpoint, save_checkpoint, LensModel};
use crate::nn::{Graph, StoreNodes};
use crate::util::{derive_rng, percentile_linear};

/// Lens forward passes run this many images at a time; fixed so results
/// never depend on how the dataset is chunked.
const CHUNK: usize = 64;

/// Residual statistics of a lens over a sampled image set.
///
/// `per_image[i]` is the mean squared residual of sample `ids[i]`
/// (averaged over pixels and channels); `mean_map[(r, c)]` is the mean
/// over samples of the channel-mean squared residual at that pixel. Both
/// are unclipped; clipping at `clip_percentile` applies only to
/// [`display_map`](Self::display_map) copies.
#[derive(Debug, Clone)]
pub struct ReconStats {
    pub ids: Vec<usize>,
    pub per_image: Vec<f64>,
    pub mean_map: Array2<f64>,
    pub clip_percentile: f64,
}

impl ReconStats {
    /// Spatial mean of the unclipped map. Equals `mean(per_image)` up to
    /// rounding — both average the same squared residuals.
    pub fn map_mean(&self) -> f64 {
        self.mean_map.mean().expect("map is non-empty")
    }

    pub fn per_image_mean(&self) -> f64 {
        self.per_image.iter().sum::<f64>() / self.per_image.len() as f64
    }

    /// Copy of the map with values above the configured percentile set to
    /// that percentile, for display. The stored map stays unclipped.
    pub fn display_map(&self) -> Array2<f64> {
        let cells: Vec<f64> = self.mean_map.iter().copied().collect();
        let cap = percentile_linear(&cells, self.clip_percentile);
        self.mean_map.mapv(|v| v.min(cap))
    }

    /// Persist as `stats.csv` (`id,per_image_loss`) plus the checkpoint
    /// container holding the unclipped map.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "recon_stats",
            "clip_percentile": self.clip_percentile,
        });
        save_checkpoint(
            dir,
            &meta,
            &[(
                "mean_map".to_string(),
                self.mean_map.mapv(|v| v as f32).into_dyn(),
            )],
        )?;
        let mut csv = String::from("id,per_image_loss\n");
        for (id, loss) in self.ids.iter().zip(self.per_image.iter()) {
            writeln!(csv, "{id},{loss:e}").expect("string write");
        }
        let path = dir.join("stats.csv");
        let tmp = path.with_extension("csv.tmp");
        fs::write(&tmp, csv).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = load_checkpoint(dir)?;
        let mean_map = ck
            .array("mean_map")
            .ok_or_else(|| Error::Checkpoint("container has no mean_map".into()))?
            .view()
            .into_dimensionality::<Ix2>()
            .map_err(|e| Error::Checkpoint(format!("mean_map is not 2-D: {e}")))?
            .mapv(|v| v as f64);
        let clip_percentile = ck
            .meta
            .get("clip_percentile")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Checkpoint("missing clip_percentile".into()))?;
        let path = dir.join("stats.csv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut ids = Vec::new();
        let mut per_image = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line.trim() != "id,per_image_loss" {
                    return Err(Error::DataFormat {
                        path,
                        detail: format!("bad stats header: {line:?}"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (id, loss) = line.split_once(',').ok_or_else(|| Error::DataFormat {
                path: path.clone(),
                detail: format!("bad stats line: {line:?}"),
            })?;
            ids.push(id.trim().parse().map_err(|_| Error::DataFormat {
                path: path.clone(),
                detail: format!("bad id: {line:?}"),
            })?);
            per_image.push(loss.trim().parse().map_err(|_| Error::DataFormat {
                path: path.clone(),
                detail: format!("bad loss: {line:?}"),
            })?);
        }
        if ids.is_empty() {
            return Err(Error::DataFormat {
                path,
                detail: "stats.csv has no rows".into(),
            });
        }
        Ok(ReconStats {
            ids,
            per_image,
            mean_map,
            clip_percentile,
        })
    }
}

/// Per-image difference `lx − x` (NHWC) and the mean squared difference
/// of each image over pixels and channels.
pub fn lens_difference(x: &ImageBatch, lx: &ImageBatch) -> Result<(Array4<f32>, Vec<f64>)> {
    if x.data.shape() != lx.data.shape() {
        return Err(Error::Shape(format!(
            "difference needs matching shapes, got {:?} vs {:?}",
            x.data.shape(),
            lx.data.shape()
        )));
    }
    if x.n() == 0 {
        return Err(Error::Shape("difference of an empty batch".into()));
    }
    let diff = &lx.data - &x.data;
    let per_image = diff
        .axis_iter(Axis(0))
        .map(|img| img.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / img.len() as f64)
        .collect();
    Ok((diff, per_image))
}

/// Run `lens` over a deterministic sample of `images` and accumulate
/// residual statistics. The sample is the first `sample_count` entries of
/// a seeded shuffle of the dataset order, so figures reproduce exactly.
/// The lens runs in inference mode; nothing is mutated.
pub fn mean_recon_map(
    lens: &LensModel<f32>,
    images: &ImageBatch,
    sample_count: usize,
    clip_percentile: f64,
    seed: u64,
) -> Result<ReconStats> {
    let n = images.n();
    if sample_count == 0 || sample_count > n {
        return Err(Error::config(format!(
            "sample_count must be in 1..={n}, got {sample_count}"
        )));
    }
    if !(0.0..=100.0).contains(&clip_percentile) {
        return Err(Error::config(format!(
            "clip percentile must be in [0, 100], got {clip_percentile}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, &["recon-map"]);
    for i in (1..n).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let ids: Vec<usize> = order[..sample_count].to_vec();

    let (h, w) = (images.data.shape()[1], images.data.shape()[2]);
    let mut map = Array2::<f64>::zeros((h, w));
    let mut per_image = Vec::with_capacity(sample_count);
    let mut lo = 0usize;
    while lo < sample_count {
        let hi = (lo + CHUNK).min(sample_count);
        let chunk = images.select(&ids[lo..hi]);
        let residual = lens_residual(lens, &chunk)?;
        for img in residual.axis_iter(Axis(0)) {
            // img is CHW; channel-mean squared residual per pixel
            let mut total = 0.0f64;
            for r in 0..h {
                for c in 0..w {
                    let mut cell = 0.0f64;
                    for ch in 0..3 {
                        let v = img[(ch, r, c)] as f64;
                        cell += v * v;
                    }
                    cell /= 3.0;
                    map[(r, c)] += cell;
                    total += cell;
                }
            }
            per_image.push(total / (h * w) as f64);
        }
        lo = hi;
    }
    map.mapv_inplace(|v| v / sample_count as f64);
    Ok(ReconStats {
        ids,
        per_image,
        mean_map: map,
        clip_percentile,
    })
}

/// Lens residual (output minus input) for one chunk, NCHW.
fn lens_residual(lens: &LensModel<f32>, chunk: &ImageBatch) -> Result<Array4<f32>> {
    let mut g = Graph::<f32>::new();
    let mut nodes = StoreNodes::new(0, &lens.params);
    let mut discard = Vec::new();
    let x = g.input(chunk.to_nchw().into_dyn(), false);
    let (_out, residual) = lens.forward(&mut g, &mut nodes, x, false, &mut discard)?;
    Ok(g.value(residual)
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .expect("residual is NCHW")
        .to_owned())
}

/// Pearson correlation between two per-image loss profiles.
///
/// Requires at least 3 aligned values; a constant profile has no
/// direction to correlate with and reports `Undefined` rather than NaN.
pub fn recon_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "correlation needs aligned inputs, got {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::Shape(format!(
            "correlation needs at least 3 values, got {}",
            a.len()
        )));
    }
    crate::util::pearson(a, b)
        .ok_or_else(|| Error::Undefined("correlation of a constant profile".into()))
}

/// Order `ids` by how much more the first run changed each image than the
/// second: descending in `a − b`, ties broken by id ascending. Returns
/// the full ordering; callers take the head or tail.
pub fn rank_by_recon_difference(
    a: &ReconStats,
    b: &ReconStats,
    ids: &[usize],
) -> Result<Vec<usize>> {
    if a.per_image.len() != b.per_image.len() || a.per_image.len() != ids.len() {
        return Err(Error::Shape(format!(
            "ranking needs aligned stats: {} vs {} losses for {} ids",
            a.per_image.len(),
            b.per_image.len(),
            ids.len()
        )));
    }
    let mut rows: Vec<(usize, f64)> = ids
        .iter()
        .zip(a.per_image.iter().zip(b.per_image.iter()))
        .map(|(&id, (&la, &lb))| (id, la - lb))
        .collect();
    rows.sort_by(|(ida, da), (idb, db)| {
        db.partial_cmp(da)
            .expect("losses are finite")
            .then(ida.cmp(idb))
    });
    Ok(rows.into_iter().map(|(id, _)| id).collect())
}
