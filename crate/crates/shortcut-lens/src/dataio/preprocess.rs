//! Resize + crop preprocessing.

use ndarray::{Array4, Axis};
use rand::Rng;

use super::transform::resize_bilinear;
use super::types::ImageBatch;
use crate::error::{Error, Result};
use crate::util::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    Central,
    Random,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Images are first resized so both edges equal this.
    pub resize_edge: usize,
    /// Then cropped to crop x crop.
    pub crop: usize,
    pub mode: CropMode,
    /// Seed for random cropping; the same seed reproduces bit-identical
    /// output. Ignored for central cropping.
    pub seed: u64,
}

impl PreprocessConfig {
    /// Identity preprocessing for images already at the working size.
    pub fn identity(side: usize) -> Self {
        PreprocessConfig {
            resize_edge: side,
            crop: side,
            mode: CropMode::Central,
            seed: 0,
        }
    }
}

/// Resize every image to `resize_edge`², then crop to `crop`².
pub fn preprocess(batch: &ImageBatch, cfg: &PreprocessConfig) -> Result<ImageBatch> {
    if cfg.crop > cfg.resize_edge {
        return Err(Error::config(format!(
            "crop {} larger than resized edge {}",
            cfg.crop, cfg.resize_edge
        )));
    }
    if cfg.crop == 0 {
        return Err(Error::config("crop must be positive"));
    }
    let n = batch.n();
    let mut rng = derive_rng(cfg.seed, &["preprocess", "crop"]);
    let mut out = Array4::<f32>::zeros((n, cfg.crop, cfg.crop, 3));
    let margin = cfg.resize_edge - cfg.crop;
    for i in 0..n {
        let img = batch.data.index_axis(Axis(0), i);
        let resized = resize_bilinear(&img, cfg.resize_edge, cfg.resize_edge);
        let (oy, ox) = match cfg.mode {
            CropMode::Central => (margin / 2, margin / 2),
            CropMode::Random => {
                // two draws per image, y then x, even when margin is 0,
                // so stream position does not depend on sizes
                let oy = rng.random_range(0..=margin);
                let ox = rng.random_range(0..=margin);
                (oy, ox)
            }
        };
        out.index_axis_mut(Axis(0), i).assign(&resized.slice(ndarray::s![
            oy..oy + cfg.crop,
            ox..ox + cfg.crop,
            ..
        ]));
    }
    Ok(ImageBatch::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn ramp_batch(n: usize, side: usize) -> ImageBatch {
        let mut data = Array4::<f32>::zeros((n, side, side, 3));
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i % 511) as f32) / 255.5 - 1.0;
        }
        ImageBatch::new(data)
    }

    #[test]
    fn identity_config_is_a_no_op() {
        let b = ramp_batch(2, 32);
        let out = preprocess(&b, &PreprocessConfig::identity(32)).unwrap();
        assert_eq!(b.data, out.data);
    }

    #[test]
    fn central_crop_removes_equal_borders() {
        let b = ramp_batch(1, 8);
        let cfg = PreprocessConfig {
            resize_edge: 8,
            crop: 4,
            mode: CropMode::Central,
            seed: 0,
        };
        let out = preprocess(&b, &cfg).unwrap();
        assert_eq!(out.data.shape(), &[1, 4, 4, 3]);
        // border removed on each side is (8-4)/2 = 2
        assert_eq!(out.data[(0, 0, 0, 0)], b.data[(0, 2, 2, 0)]);
        assert_eq!(out.data[(0, 3, 3, 2)], b.data[(0, 5, 5, 2)]);
    }

    #[test]
    fn random_crop_same_seed_is_bit_identical() {
        let b = ramp_batch(3, 16);
        let cfg = PreprocessConfig {
            resize_edge: 16,
            crop: 9,
            mode: CropMode::Random,
            seed: 42,
        };
        let a = preprocess(&b, &cfg).unwrap();
        let c = preprocess(&b, &cfg).unwrap();
        assert_eq!(a.data, c.data);
        let cfg2 = PreprocessConfig { seed: 43, ..cfg };
        let d = preprocess(&b, &cfg2).unwrap();
        assert_ne!(a.data, d.data);
    }

    #[test]
    fn oversized_crop_is_a_config_error() {
        let b = ramp_batch(1, 8);
        let cfg = PreprocessConfig {
            resize_edge: 8,
            crop: 9,
            mode: CropMode::Central,
            seed: 0,
        };
        let err = preprocess(&b, &cfg).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn values_stay_in_unit_range_after_resize() {
        let b = ramp_batch(1, 10);
        let cfg = PreprocessConfig {
            resize_edge: 23,
            crop: 20,
            mode: CropMode::Central,
            seed: 0,
        };
        let out = preprocess(&b, &cfg).unwrap();
        for &v in out.data.iter() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }
}
