//! Builders that turn plain images into pretext-task batches with
//! machine-generated labels.

use ndarray::{Array3, Array4};
use rand::Rng;

use super::{PermutationSet, PretextBatch, PretextInputs, Task};
use crate::dataio::patches::LUMA;
use crate::dataio::{augment_patches, extract_patch_grid, rotate90, AugmentConfig, ImageBatch};
use crate::error::{Error, Result};
use crate::util::derive_rng;

/// Expand every image into its four quarter-turn rotations (counter-
/// clockwise multiples of 90 degrees, an exact pixel permutation). Output
/// order is per-source: image i contributes examples 4i..4i+4 with labels
/// 0..=3.
pub fn make_rotation_batch(batch: &ImageBatch) -> Result<PretextBatch> {
    let (n, h, w) = (batch.n(), batch.h(), batch.w());
    if h != w {
        return Err(Error::Shape(format!(
            "rotation task requires square images, got {h}x{w}"
        )));
    }
    let mut out = Array4::<f32>::zeros((4 * n, h, w, 3));
    let mut labels = Vec::with_capacity(4 * n);
    let mut groups = Vec::with_capacity(4 * n);
    for i in 0..n {
        let img = batch.data.index_axis(ndarray::Axis(0), i);
        for k in 0..4 {
            out.index_axis_mut(ndarray::Axis(0), 4 * i + k)
                .assign(&rotate90(&img, k));
            labels.push(k);
            groups.push(i);
        }
    }
    Ok(PretextBatch {
        inputs: PretextInputs::Images(ImageBatch::new(out)),
        labels,
        task: Task::Rotation,
        groups,
    })
}

/// Augmentation ranges for exemplar copies. Geometric: random translation
/// up to `translation_frac` of the side and scaling in
/// [`scale_lo`, `scale_hi`] (bilinear, edge clamp). Photometric: brightness
/// shift up to `brightness_delta`, saturation factor in
/// [`saturation_lo`, `saturation_hi`], and full grayscale conversion with
/// probability `grayscale_probability`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExemplarAugConfig {
    pub translation_frac: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub brightness_delta: f64,
    pub saturation_lo: f64,
    pub saturation_hi: f64,
    pub grayscale_probability: f64,
}

impl Default for ExemplarAugConfig {
    fn default() -> Self {
        Self {
            translation_frac: 0.2,
            scale_lo: 0.8,
            scale_hi: 1.2,
            brightness_delta: 0.2,
            saturation_lo: 0.7,
            saturation_hi: 1.3,
            grayscale_probability: 0.66,
        }
    }
}

impl ExemplarAugConfig {
    /// Identity augmentation: every copy equals its source bit-exactly.
    pub fn off() -> Self {
        Self {
            translation_frac: 0.0,
            scale_lo: 1.0,
            scale_hi: 1.0,
            brightness_delta: 0.0,
            saturation_lo: 1.0,
            saturation_hi: 1.0,
            grayscale_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.translation_frac)
            || self.scale_lo <= 0.0
            || self.scale_hi < self.scale_lo
            || self.brightness_delta < 0.0
            || self.saturation_lo < 0.0
            || self.saturation_hi < self.saturation_lo
            || !(0.0..=1.0).contains(&self.grayscale_probability)
        {
            return Err(Error::config("exemplar augmentation ranges out of bounds"));
        }
        Ok(())
    }
}

/// Resample with content scaled by `s` about the image center and shifted
/// by (ty, tx) pixels; bilinear interpolation with edge clamp. s=1, t=0 is
/// a bit-exact copy.
fn affine_resample(img: &Array3<f32>, s: f64, ty: f64, tx: f64) -> Array3<f32> {
    let (h, w, _) = img.dim();
    if s == 1.0 && ty == 0.0 && tx == 0.0 {
        return img.clone();
    }
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Array3::<f32>::zeros((h, w, 3));
    for r in 0..h {
        let sy = ((r as f64 - cy) / s + cy - ty).clamp(0.0, h as f64 - 1.0);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = (sy - y0 as f64) as f32;
        for c in 0..w {
            let sx = ((c as f64 - cx) / s + cx - tx).clamp(0.0, w as f64 - 1.0);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = (sx - x0 as f64) as f32;
            for ch in 0..3 {
                let top = img[(y0, x0, ch)] * (1.0 - wx) + img[(y0, x1, ch)] * wx;
                let bot = img[(y1, x0, ch)] * (1.0 - wx) + img[(y1, x1, ch)] * wx;
                out[(r, c, ch)] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

/// Create `copies` independently augmented copies of each image. Copies of
/// source i are consecutive with group id i; labels mirror the group ids
/// (the triplet loss consumes groups, not labels).
pub fn make_exemplar_batch(
    batch: &ImageBatch,
    copies: usize,
    cfg: &ExemplarAugConfig,
    seed: u64,
) -> Result<PretextBatch> {
    if copies < 2 {
        return Err(Error::config("exemplar task needs at least 2 copies"));
    }
    cfg.validate()?;
    let (n, h, w) = (batch.n(), batch.h(), batch.w());
    let side = h.min(w) as f64;
    let mut out = Array4::<f32>::zeros((n * copies, h, w, 3));
    let mut groups = Vec::with_capacity(n * copies);
    for i in 0..n {
        let src = batch.data.index_axis(ndarray::Axis(0), i).to_owned();
        for j in 0..copies {
            let mut rng = derive_rng(seed, &["exemplar", &i.to_string(), &j.to_string()]);
            // fixed draw order: scale, translation, brightness, saturation, gray coin
            let s = rng.random_range(cfg.scale_lo..=cfg.scale_hi);
            let t = cfg.translation_frac * side;
            let ty = rng.random_range(-t..=t);
            let tx = rng.random_range(-t..=t);
            let b = rng.random_range(-cfg.brightness_delta..=cfg.brightness_delta) as f32;
            let sat = rng.random_range(cfg.saturation_lo..=cfg.saturation_hi) as f32;
            let gray = rng.random::<f64>() < cfg.grayscale_probability;
            let mut img = affine_resample(&src, s, ty, tx);
            if b != 0.0 {
                img.mapv_inplace(|v| (v + b).clamp(-1.0, 1.0));
            }
            if sat != 1.0 || gray {
                for r in 0..h {
                    for c in 0..w {
                        let y = LUMA[0] * img[(r, c, 0)]
                            + LUMA[1] * img[(r, c, 1)]
                            + LUMA[2] * img[(r, c, 2)];
                        for ch in 0..3 {
                            img[(r, c, ch)] = if gray {
                                y
                            } else {
                                (y + sat * (img[(r, c, ch)] - y)).clamp(-1.0, 1.0)
                            };
                        }
                    }
                }
            }
            out.index_axis_mut(ndarray::Axis(0), i * copies + j).assign(&img);
            groups.push(i);
        }
    }
    Ok(PretextBatch {
        inputs: PretextInputs::Images(ImageBatch::new(out)),
        labels: groups.clone(),
        task: Task::Exemplar,
        groups,
    })
}

/// Shared configuration for the patch-based tasks: how much of the image
/// the 3x3 grid covers and which patch augmentations apply.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchTaskConfig {
    pub region_fraction: f64,
    pub augment: AugmentConfig,
}

impl Default for PatchTaskConfig {
    fn default() -> Self {
        Self {
            region_fraction: 1.0,
            augment: AugmentConfig::default(),
        }
    }
}

impl PatchTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.region_fraction > 0.0 && self.region_fraction <= 1.0) {
            return Err(Error::config(format!(
                "region_fraction must lie in (0, 1], got {}",
                self.region_fraction
            )));
        }
        Ok(())
    }
}

/// Map a neighbor class 0..=7 to its row-major cell index in a 3x3 grid
/// (the center cell 4 is skipped): 0 is upper-left, 7 is lower-right.
pub(crate) fn neighbor_cell(label: usize) -> usize {
    assert!(label < 8);
    if label < 4 {
        label
    } else {
        label + 1
    }
}

/// Per image, pair the center patch with one uniformly drawn neighbor from
/// the 8-connected cells; the label encodes the neighbor's position
/// (row-major, center skipped).
pub fn make_relpatch_batch(
    images: &ImageBatch,
    cfg: &PatchTaskConfig,
    seed: u64,
) -> Result<PretextBatch> {
    let n = images.n();
    let mut center = Vec::with_capacity(n);
    let mut neighbor = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let img = images.data.index_axis(ndarray::Axis(0), i);
        let mut rng = derive_rng(seed, &["relpatch", &i.to_string()]);
        // draw order: neighbor class first, then augmentation draws
        let k = rng.random_range(0..8usize);
        let grid = extract_patch_grid(&img, 3, cfg.region_fraction)?;
        let aug = augment_patches(&img, &grid, &cfg.augment, &mut rng);
        center.push(aug.patches[4].clone());
        neighbor.push(aug.patches[neighbor_cell(k)].clone());
        labels.push(k);
    }
    Ok(PretextBatch {
        inputs: PretextInputs::PatchPairs { center, neighbor },
        labels,
        task: Task::Relpatch,
        groups: (0..n).collect(),
    })
}

/// Per image, shuffle the 3x3 patch grid by a permutation drawn uniformly
/// from `perm_set`; stack position j holds patch `perm[j]`, and the label
/// is the permutation's index.
pub fn make_jigsaw_batch(
    images: &ImageBatch,
    perm_set: &PermutationSet,
    cfg: &PatchTaskConfig,
    seed: u64,
) -> Result<PretextBatch> {
    if perm_set.perms.is_empty() {
        return Err(Error::config("jigsaw needs a nonempty permutation set"));
    }
    let cells = perm_set.cells();
    let grid = (cells as f64).sqrt().round() as usize;
    if grid * grid != cells {
        return Err(Error::config(format!(
            "permutation length {cells} is not a square grid"
        )));
    }
    let n = images.n();
    let mut stacks = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let img = images.data.index_axis(ndarray::Axis(0), i);
        let mut rng = derive_rng(seed, &["jigsaw", &i.to_string()]);
        // draw order: permutation index first, then augmentation draws
        let p = rng.random_range(0..perm_set.count());
        let patches = extract_patch_grid(&img, grid, cfg.region_fraction)?;
        let aug = augment_patches(&img, &patches, &cfg.augment, &mut rng);
        let stack: Vec<Array3<f32>> = perm_set.perms[p]
            .iter()
            .map(|&cell| aug.patches[cell].clone())
            .collect();
        stacks.push(stack);
        labels.push(p);
    }
    Ok(PretextBatch {
        inputs: PretextInputs::PatchStacks(stacks),
        labels,
        task: Task::Jigsaw,
        groups: (0..n).collect(),
    })
}

/// Uniform random batch in [-1, 1], used by tests.
#[cfg(test)]
fn test_images(n: usize, side: usize, seed: u64) -> ImageBatch {
    crate::dataio::synth::noise_batch(n, side, seed, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretext::select_permutation_subset;

    fn sorted_pixels(img: &ndarray::ArrayView3<f32>) -> Vec<u32> {
        let mut v: Vec<u32> = img.iter().map(|f| f.to_bits()).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn rotation_batch_layout_and_labels() {
        let src = test_images(2, 8, 1);
        let b = make_rotation_batch(&src).unwrap();
        assert_eq!(b.len(), 8);
        assert_eq!(b.labels, vec![0, 1, 2, 3, 0, 1, 2, 3]);
        assert_eq!(b.groups, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(b.task, Task::Rotation);
    }

    #[test]
    fn rotation_labels_rederive_from_content() {
        let src = test_images(3, 10, 2);
        let b = make_rotation_batch(&src).unwrap();
        let PretextInputs::Images(imgs) = &b.inputs else {
            panic!("rotation inputs are whole images")
        };
        for (idx, (&label, &group)) in b.labels.iter().zip(&b.groups).enumerate() {
            let out = imgs.data.index_axis(ndarray::Axis(0), idx);
            let back = rotate90(&out, (4 - label) % 4);
            let original = src.data.index_axis(ndarray::Axis(0), group);
            assert_eq!(back, original, "rotating back by the label restores the source");
        }
    }

    #[test]
    fn rotation_preserves_pixel_multiset() {
        let src = test_images(2, 9, 3);
        let b = make_rotation_batch(&src).unwrap();
        let PretextInputs::Images(imgs) = &b.inputs else { unreachable!() };
        for idx in 0..b.len() {
            let out = imgs.data.index_axis(ndarray::Axis(0), idx);
            let original = src.data.index_axis(ndarray::Axis(0), b.groups[idx]);
            assert_eq!(sorted_pixels(&out), sorted_pixels(&original));
        }
    }

    #[test]
    fn rotation_rejects_non_square() {
        let data = Array4::<f32>::zeros((1, 4, 6, 3));
        assert!(make_rotation_batch(&ImageBatch::new(data)).is_err());
    }

    #[test]
    fn exemplar_counts_groups_and_determinism() {
        let src = test_images(2, 8, 4);
        let b = make_exemplar_batch(&src, 8, &ExemplarAugConfig::default(), 7).unwrap();
        assert_eq!(b.len(), 16);
        let want: Vec<usize> = std::iter::repeat_n(0, 8).chain(std::iter::repeat_n(1, 8)).collect();
        assert_eq!(b.groups, want);
        assert_eq!(b.labels, b.groups);
        let b2 = make_exemplar_batch(&src, 8, &ExemplarAugConfig::default(), 7).unwrap();
        let (PretextInputs::Images(x), PretextInputs::Images(y)) = (&b.inputs, &b2.inputs) else {
            unreachable!()
        };
        assert_eq!(x.data, y.data, "same seed reproduces bit-exactly");
        // copies genuinely differ from each other under default augmentation
        assert_ne!(
            x.data.index_axis(ndarray::Axis(0), 0),
            x.data.index_axis(ndarray::Axis(0), 1)
        );
    }

    #[test]
    fn exemplar_disabled_augmentation_copies_sources() {
        let src = test_images(2, 8, 5);
        let b = make_exemplar_batch(&src, 3, &ExemplarAugConfig::off(), 9).unwrap();
        let PretextInputs::Images(x) = &b.inputs else { unreachable!() };
        for idx in 0..b.len() {
            assert_eq!(
                x.data.index_axis(ndarray::Axis(0), idx),
                src.data.index_axis(ndarray::Axis(0), b.groups[idx]),
                "identity augmentation must be bit-exact"
            );
        }
    }

    #[test]
    fn exemplar_rejects_single_copy() {
        let src = test_images(1, 8, 5);
        let err = make_exemplar_batch(&src, 1, &ExemplarAugConfig::off(), 0).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn relpatch_labels_rederive_from_grid_cells() {
        let src = test_images(16, 12, 6);
        let cfg = PatchTaskConfig {
            region_fraction: 1.0,
            augment: AugmentConfig::off(),
        };
        let b = make_relpatch_batch(&src, &cfg, 11).unwrap();
        assert_eq!(b.len(), 16);
        let PretextInputs::PatchPairs { center, neighbor } = &b.inputs else {
            unreachable!()
        };
        for i in 0..b.len() {
            let img = src.data.index_axis(ndarray::Axis(0), i);
            let grid = extract_patch_grid(&img, 3, 1.0).unwrap();
            assert_eq!(center[i], grid.patches[4], "center is the middle cell");
            assert_eq!(
                neighbor[i],
                grid.patches[neighbor_cell(b.labels[i])],
                "neighbor content matches the labeled cell"
            );
            assert!(b.labels[i] < 8);
        }
    }

    #[test]
    fn relpatch_labels_are_roughly_uniform() {
        let src = test_images(4000, 6, 7);
        let cfg = PatchTaskConfig {
            region_fraction: 1.0,
            augment: AugmentConfig::off(),
        };
        let b = make_relpatch_batch(&src, &cfg, 13).unwrap();
        let mut counts = [0usize; 8];
        for &l in &b.labels {
            counts[l] += 1;
        }
        // binomial band around 4000/8 = 500; 4 sigma since eight labels are
        // tested at once
        let sigma = (4000.0f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for (l, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - 500.0).abs() < 4.0 * sigma,
                "label {l} count {c} outside 500 +- {:.1}",
                4.0 * sigma
            );
        }
    }

    #[test]
    fn jigsaw_identity_set_keeps_canonical_order() {
        let src = test_images(3, 12, 8);
        let set = select_permutation_subset(1, 3, 0).unwrap();
        let cfg = PatchTaskConfig {
            region_fraction: 1.0,
            augment: AugmentConfig::off(),
        };
        let b = make_jigsaw_batch(&src, &set, &cfg, 3).unwrap();
        assert!(b.labels.iter().all(|&l| l == 0));
        let PretextInputs::PatchStacks(stacks) = &b.inputs else { unreachable!() };
        for i in 0..b.len() {
            let img = src.data.index_axis(ndarray::Axis(0), i);
            let grid = extract_patch_grid(&img, 3, 1.0).unwrap();
            for j in 0..9 {
                assert_eq!(stacks[i][j], grid.patches[j]);
            }
        }
    }

    #[test]
    fn jigsaw_inverse_permutation_restores_canonical_order() {
        let src = test_images(6, 12, 9);
        let set = select_permutation_subset(24, 3, 1).unwrap();
        let cfg = PatchTaskConfig {
            region_fraction: 1.0,
            augment: AugmentConfig::off(),
        };
        let b = make_jigsaw_batch(&src, &set, &cfg, 17).unwrap();
        let PretextInputs::PatchStacks(stacks) = &b.inputs else { unreachable!() };
        for i in 0..b.len() {
            let perm = &set.perms[b.labels[i]];
            let img = src.data.index_axis(ndarray::Axis(0), i);
            let grid = extract_patch_grid(&img, 3, 1.0).unwrap();
            // stack[j] = patches[perm[j]] -> placing stack[j] at cell perm[j]
            // rebuilds the canonical grid
            let mut restored: Vec<Option<&Array3<f32>>> = vec![None; 9];
            for (j, patch) in stacks[i].iter().enumerate() {
                restored[perm[j]] = Some(patch);
            }
            for cell in 0..9 {
                assert_eq!(restored[cell].unwrap(), &grid.patches[cell]);
            }
        }
    }

    #[test]
    fn jigsaw_label_histogram_is_uniform_within_three_sigma() {
        let src = test_images(10_000, 6, 10);
        let set = select_permutation_subset(4, 3, 2).unwrap();
        let cfg = PatchTaskConfig {
            region_fraction: 1.0,
            augment: AugmentConfig::off(),
        };
        let b = make_jigsaw_batch(&src, &set, &cfg, 23).unwrap();
        let mut counts = [0usize; 4];
        for &l in &b.labels {
            counts[l] += 1;
        }
        let expect = 2500.0f64;
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for (l, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() < 3.0 * sigma,
                "label {l} count {c} outside {expect} +- {:.1}",
                3.0 * sigma
            );
        }
    }
}
