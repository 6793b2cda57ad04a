//! Patch grids and patch-level augmentation for the patch-based pretext
//! tasks (relative location, jigsaw).

use ndarray::{Array3, ArrayView3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Patches cut from one source image, with their top-left coordinates so
/// jitter can re-extract from the source.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub patches: Vec<Array3<f32>>,
    pub coords: Vec<(usize, usize)>,
    pub patch_size: usize,
    pub grid: usize,
}

/// Cut a grid x grid set of equal patches from the centered region covering
/// `region_fraction` of the image side. Patches are ordered row-major,
/// top-left first.
pub fn extract_patch_grid(
    image: &ArrayView3<f32>,
    grid: usize,
    region_fraction: f64,
) -> Result<PatchSet> {
    let (h, w, _) = image.dim();
    if h != w {
        return Err(Error::config(format!(
            "patch grid requires a square image, got {h}x{w}"
        )));
    }
    if grid == 0 || !(0.0..=1.0).contains(&region_fraction) || region_fraction <= 0.0 {
        return Err(Error::config("grid must be >=1 and region_fraction in (0,1]"));
    }
    let region = (h as f64 * region_fraction).round() as usize;
    if region == 0 || region % grid != 0 {
        return Err(Error::config(format!(
            "region {region} (fraction {region_fraction} of {h}) not divisible by grid {grid}"
        )));
    }
    let psize = region / grid;
    let off = (h - region) / 2;
    let mut patches = Vec::with_capacity(grid * grid);
    let mut coords = Vec::with_capacity(grid * grid);
    for gr in 0..grid {
        for gc in 0..grid {
            let r0 = off + gr * psize;
            let c0 = off + gc * psize;
            patches.push(
                image
                    .slice(ndarray::s![r0..r0 + psize, c0..c0 + psize, ..])
                    .to_owned(),
            );
            coords.push((r0, c0));
        }
    }
    Ok(PatchSet {
        patches,
        coords,
        patch_size: psize,
        grid,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub grayscale: bool,
    pub grayscale_probability: f64,
    pub jitter: bool,
    /// Maximum absolute jitter offset per axis, in pixels.
    pub jitter_max: usize,
    pub standardize: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            grayscale: true,
            grayscale_probability: 0.66,
            jitter: true,
            jitter_max: 21,
            standardize: true,
        }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        AugmentConfig {
            grayscale: false,
            jitter: false,
            standardize: false,
            ..Default::default()
        }
    }
}

pub(crate) const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Augment the patches of one example. Draw order is fixed: one grayscale
/// coin for the whole example, then per patch a (dy, dx) jitter pair.
/// Jitter re-extracts from the source image at the offset coordinates,
/// clamped so the patch stays in bounds. Standardization is per patch, per
/// channel: (v - mean) / max(std, 1e-6).
pub fn augment_patches(
    source: &ArrayView3<f32>,
    set: &PatchSet,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> PatchSet {
    let (h, w, _) = source.dim();
    let ps = set.patch_size;
    let gray = cfg.grayscale && rng.random::<f64>() < cfg.grayscale_probability;
    let mut out = PatchSet {
        patches: Vec::with_capacity(set.patches.len()),
        coords: Vec::with_capacity(set.coords.len()),
        patch_size: ps,
        grid: set.grid,
    };
    for (idx, patch) in set.patches.iter().enumerate() {
        let (mut r0, mut c0) = set.coords[idx];
        let mut p = if cfg.jitter {
            let m = cfg.jitter_max as i64;
            let dy = rng.random_range(-m..=m);
            let dx = rng.random_range(-m..=m);
            r0 = (r0 as i64 + dy).clamp(0, (h - ps) as i64) as usize;
            c0 = (c0 as i64 + dx).clamp(0, (w - ps) as i64) as usize;
            source
                .slice(ndarray::s![r0..r0 + ps, c0..c0 + ps, ..])
                .to_owned()
        } else {
            patch.clone()
        };
        if gray {
            for r in 0..ps {
                for c in 0..ps {
                    let y = LUMA[0] * p[(r, c, 0)] + LUMA[1] * p[(r, c, 1)] + LUMA[2] * p[(r, c, 2)];
                    p[(r, c, 0)] = y;
                    p[(r, c, 1)] = y;
                    p[(r, c, 2)] = y;
                }
            }
        }
        if cfg.standardize {
            // Moments in f64: the small-std floor below would otherwise
            // amplify f32 summation error (a constant patch must map to
            // exact zeros).
            let m = (ps * ps) as f64;
            for ch in 0..3 {
                let mut mean = 0.0f64;
                for r in 0..ps {
                    for c in 0..ps {
                        mean += p[(r, c, ch)] as f64;
                    }
                }
                mean /= m;
                let mut var = 0.0f64;
                for r in 0..ps {
                    for c in 0..ps {
                        let d = p[(r, c, ch)] as f64 - mean;
                        var += d * d;
                    }
                }
                let std = (var / m).sqrt().max(1e-6);
                for r in 0..ps {
                    for c in 0..ps {
                        p[(r, c, ch)] = ((p[(r, c, ch)] as f64 - mean) / std) as f32;
                    }
                }
            }
        }
        out.patches.push(p);
        out.coords.push((r0, c0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn ramp(side: usize) -> Array3<f32> {
        let mut img = Array3::<f32>::zeros((side, side, 3));
        for (i, v) in img.iter_mut().enumerate() {
            *v = (i as f32 * 0.001).sin();
        }
        img
    }

    #[test]
    fn grid_patches_tile_the_central_region_exactly() {
        let img = ramp(21);
        // fraction 6/7 of 21 = 18 -> 3x3 grid of 6x6 patches
        let set = extract_patch_grid(&img.view(), 3, 6.0 / 7.0).unwrap();
        assert_eq!(set.patches.len(), 9);
        assert_eq!(set.patch_size, 6);
        assert_eq!(set.coords[0], ((21 - 18) / 2, (21 - 18) / 2));
        // reassemble and compare to the central region bit-exactly
        let off = (21 - 18) / 2;
        for gr in 0..3 {
            for gc in 0..3 {
                let p = &set.patches[gr * 3 + gc];
                let want = img.slice(ndarray::s![
                    off + gr * 6..off + (gr + 1) * 6,
                    off + gc * 6..off + (gc + 1) * 6,
                    ..
                ]);
                assert_eq!(p, &want.to_owned(), "patch ({gr},{gc})");
            }
        }
    }

    #[test]
    fn grid_one_is_a_single_central_crop() {
        let img = ramp(8);
        let set = extract_patch_grid(&img.view(), 1, 0.5).unwrap();
        assert_eq!(set.patches.len(), 1);
        assert_eq!(set.patch_size, 4);
        assert_eq!(set.coords[0], (2, 2));
    }

    #[test]
    fn indivisible_region_is_a_config_error() {
        let img = ramp(10);
        // fraction 0.7 of 10 = 7, not divisible by 3
        assert!(extract_patch_grid(&img.view(), 3, 0.7).unwrap_err().is_config());
    }

    #[test]
    fn all_augmentations_off_is_identity() {
        let img = ramp(12);
        let set = extract_patch_grid(&img.view(), 3, 0.75).unwrap();
        let mut rng = crate::util::derive_rng(0, &["aug"]);
        let out = augment_patches(&img.view(), &set, &AugmentConfig::off(), &mut rng);
        for (a, b) in set.patches.iter().zip(&out.patches) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn standardizing_a_constant_patch_gives_zeros() {
        let img = Array3::<f32>::from_elem((9, 9, 3), 0.7);
        let set = extract_patch_grid(&img.view(), 3, 1.0).unwrap();
        let mut rng = crate::util::derive_rng(0, &["aug"]);
        let cfg = AugmentConfig {
            grayscale: false,
            jitter: false,
            standardize: true,
            ..Default::default()
        };
        let out = augment_patches(&img.view(), &set, &cfg, &mut rng);
        for p in &out.patches {
            for &v in p.iter() {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn grayscale_uses_luma_601_weights() {
        // pixel (1, 0, -1) -> 0.299 - 0.114 = 0.185 on all channels
        let mut img = Array3::<f32>::zeros((3, 3, 3));
        for r in 0..3 {
            for c in 0..3 {
                img[(r, c, 0)] = 1.0;
                img[(r, c, 1)] = 0.0;
                img[(r, c, 2)] = -1.0;
            }
        }
        let set = extract_patch_grid(&img.view(), 1, 1.0).unwrap();
        let cfg = AugmentConfig {
            grayscale: true,
            grayscale_probability: 1.0,
            jitter: false,
            standardize: false,
            ..Default::default()
        };
        let mut rng = crate::util::derive_rng(0, &["aug"]);
        let out = augment_patches(&img.view(), &set, &cfg, &mut rng);
        for &v in out.patches[0].iter() {
            assert!((v - 0.185).abs() < 1e-6);
        }
    }

    #[test]
    fn grayscale_coin_is_joint_across_patches_of_an_example() {
        let img = ramp(12);
        let set = extract_patch_grid(&img.view(), 3, 0.75).unwrap();
        let cfg = AugmentConfig {
            grayscale: true,
            grayscale_probability: 0.5,
            jitter: false,
            standardize: false,
            ..Default::default()
        };
        // over many seeds, each example's patches are either all gray or
        // none gray
        for seed in 0..20 {
            let mut rng = crate::util::derive_rng(seed, &["aug"]);
            let out = augment_patches(&img.view(), &set, &cfg, &mut rng);
            let is_gray = |p: &Array3<f32>| {
                p.indexed_iter()
                    .all(|((r, c, _), _)| p[(r, c, 0)] == p[(r, c, 1)] && p[(r, c, 1)] == p[(r, c, 2)])
            };
            let grays: Vec<bool> = out.patches.iter().map(is_gray).collect();
            assert!(
                grays.iter().all(|&g| g) || grays.iter().all(|&g| !g),
                "seed {seed}: mixed grayscale within an example"
            );
        }
    }

    #[test]
    fn jitter_clamps_to_image_bounds() {
        let img = ramp(12);
        let set = extract_patch_grid(&img.view(), 3, 1.0).unwrap();
        let cfg = AugmentConfig {
            grayscale: false,
            jitter: true,
            jitter_max: 50, // way beyond bounds; must clamp
            standardize: false,
            ..Default::default()
        };
        for seed in 0..10 {
            let mut rng = crate::util::derive_rng(seed, &["aug"]);
            let out = augment_patches(&img.view(), &set, &cfg, &mut rng);
            for &(r0, c0) in &out.coords {
                assert!(r0 + out.patch_size <= 12);
                assert!(c0 + out.patch_size <= 12);
            }
            // patches still come from the source image
            for (p, &(r0, c0)) in out.patches.iter().zip(&out.coords) {
                let want = img.slice(ndarray::s![r0..r0 + 4, c0..c0 + 4, ..]);
                assert_eq!(p, &want.to_owned());
            }
        }
    }
}
