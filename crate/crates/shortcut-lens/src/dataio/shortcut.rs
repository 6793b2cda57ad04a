//! Synthetic shortcut injectors.
//!
//! Both injectors plant an easy directional cue that a pretext task can
//! exploit instead of learning real structure: a small arrow glyph whose
//! orientation tracks the rotation label, and a global chromatic shift that
//! misregisters the red/blue channels along x.

use ndarray::Array4;

use super::transform::rotate_coord;
use super::types::ImageBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShortcutKind {
    Arrow,
    Chromatic,
    None,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShortcutConfig {
    pub kind: ShortcutKind,
    /// Top-left corner (row, col) where the arrow glyph lands.
    pub arrow_offset: (usize, usize),
    /// Glyph height in pixels; must be a multiple of 7 (the base bitmap is
    /// 7x5 and scales by whole factors).
    pub arrow_size: usize,
    /// Chromatic shift distance in pixels.
    pub channel_shift: usize,
    /// Fraction of images the training pipeline injects; the injectors
    /// themselves always apply to every image they are given.
    pub apply_probability: f64,
}

impl Default for ShortcutConfig {
    fn default() -> Self {
        ShortcutConfig {
            kind: ShortcutKind::None,
            arrow_offset: (2, 2),
            arrow_size: 7,
            channel_shift: 2,
            apply_probability: 1.0,
        }
    }
}

impl ShortcutConfig {
    pub fn arrow() -> Self {
        ShortcutConfig {
            kind: ShortcutKind::Arrow,
            ..Default::default()
        }
    }

    pub fn chromatic(shift: usize) -> Self {
        ShortcutConfig {
            kind: ShortcutKind::Chromatic,
            channel_shift: shift,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arrow_size == 0 || self.arrow_size % 7 != 0 {
            return Err(Error::config(format!(
                "arrow_size {} must be a positive multiple of 7",
                self.arrow_size
            )));
        }
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::config("apply_probability outside [0, 1]"));
        }
        Ok(())
    }
}

/// 7x5 arrow bitmap in canonical orientation (pointing up): a 3-wide head
/// over a 1-wide shaft. Row-major, 1 = stamped pixel.
pub const ARROW_GLYPH: [[u8; 5]; 7] = [
    [0, 0, 1, 0, 0],
    [0, 1, 1, 1, 0],
    [1, 1, 1, 1, 1],
    [0, 0, 1, 0, 0],
    [0, 0, 1, 0, 0],
    [0, 0, 1, 0, 0],
    [0, 0, 1, 0, 0],
];

/// Stamp the arrow glyph as it would appear had it been stamped at
/// `cfg.arrow_offset` in canonical orientation BEFORE rotating each image
/// by its rotation label (in CCW quarter turns). Stamping then rotating is
/// an exact pixel permutation, so computing the rotated stamp directly is
/// bit-identical to stamping first and rotating after. Glyph pixels are set
/// to +1.0 on all channels; every other pixel is untouched.
pub fn inject_arrow(
    batch: &ImageBatch,
    cfg: &ShortcutConfig,
    rotation_labels: &[usize],
) -> Result<ImageBatch> {
    cfg.validate()?;
    if cfg.kind != ShortcutKind::Arrow {
        return Err(Error::config("inject_arrow called with non-arrow config"));
    }
    if rotation_labels.len() != batch.n() {
        return Err(Error::Shape(format!(
            "inject_arrow: {} labels for {} images",
            rotation_labels.len(),
            batch.n()
        )));
    }
    if let Some(&bad) = rotation_labels.iter().find(|&&l| l > 3) {
        return Err(Error::config(format!(
            "rotation label {bad} outside {{0,1,2,3}}"
        )));
    }
    let (h, w) = (batch.h(), batch.w());
    let scale = cfg.arrow_size / 7;
    let (gh, gw) = (7 * scale, 5 * scale);
    let (or, oc) = cfg.arrow_offset;
    if or + gh > h || oc + gw > w {
        return Err(Error::config(format!(
            "arrow glyph {gh}x{gw} at offset ({or},{oc}) exceeds {h}x{w} image"
        )));
    }
    if rotation_labels.iter().any(|&l| l != 0) && h != w {
        return Err(Error::config(
            "rotated arrow stamping requires square images",
        ));
    }
    let mut out: Array4<f32> = batch.data.clone();
    for (i, &label) in rotation_labels.iter().enumerate() {
        for (gr, row) in ARROW_GLYPH.iter().enumerate() {
            for (gc, &bit) in row.iter().enumerate() {
                if bit == 0 {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        let r = or + gr * scale + sy;
                        let c = oc + gc * scale + sx;
                        let (rr, cc) = rotate_coord(r, c, w, label);
                        for ch in 0..3 {
                            out[(i, rr, cc, ch)] = 1.0;
                        }
                    }
                }
            }
        }
    }
    Ok(ImageBatch::new(out))
}

/// Shift the red channel +d pixels along +x and the blue channel -d pixels,
/// leaving green untouched. Out-of-range samples replicate the edge column.
pub fn inject_chromatic(batch: &ImageBatch, cfg: &ShortcutConfig) -> Result<ImageBatch> {
    cfg.validate()?;
    if cfg.kind != ShortcutKind::Chromatic {
        return Err(Error::config(
            "inject_chromatic called with non-chromatic config",
        ));
    }
    let d = cfg.channel_shift;
    let (n, h, w) = (batch.n(), batch.h(), batch.w());
    if d >= w {
        return Err(Error::config(format!(
            "channel_shift {d} must be smaller than image width {w}"
        )));
    }
    if d == 0 {
        return Ok(batch.clone());
    }
    let mut out = batch.data.clone();
    for i in 0..n {
        for r in 0..h {
            for c in 0..w {
                // red shifted right: sample from c-d, clamped to the left edge
                let src_r = c.saturating_sub(d);
                out[(i, r, c, 0)] = batch.data[(i, r, src_r, 0)];
                // blue shifted left: sample from c+d, clamped to the right edge
                let src_b = (c + d).min(w - 1);
                out[(i, r, c, 2)] = batch.data[(i, r, src_b, 2)];
            }
        }
    }
    Ok(ImageBatch::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn noise_batch(n: usize, side: usize, seed: u64) -> ImageBatch {
        let mut rng = crate::util::derive_rng(seed, &["shortcut-test"]);
        use rand::Rng;
        ImageBatch::new(Array4::from_shape_simple_fn((n, side, side, 3), || {
            rng.random_range(-1.0f32..1.0)
        }))
    }

    #[test]
    fn arrow_touches_only_glyph_pixels_and_sets_them_to_one() {
        let b = noise_batch(2, 32, 1);
        let out = inject_arrow(&b, &ShortcutConfig::arrow(), &[0, 0]).unwrap();
        let mut touched = 0;
        for i in 0..2 {
            for r in 0..32 {
                for c in 0..32 {
                    let in_glyph = (2..9).contains(&r)
                        && (2..7).contains(&c)
                        && ARROW_GLYPH[r - 2][c - 2] == 1;
                    for ch in 0..3 {
                        if in_glyph {
                            assert_eq!(out.data[(i, r, c, ch)], 1.0);
                            touched += 1;
                        } else {
                            assert_eq!(out.data[(i, r, c, ch)], b.data[(i, r, c, ch)]);
                        }
                    }
                }
            }
        }
        let glyph_px: usize = ARROW_GLYPH.iter().flatten().map(|&b| b as usize).sum();
        assert_eq!(touched, 2 * 3 * glyph_px);
    }

    #[test]
    fn rotated_stamp_commutes_with_image_rotation() {
        // rotate(inject(x, label=0), k) == inject(rotate(x, k), label=k):
        // stamping canonically and then rotating the whole image gives the
        // same bits as stamping the pre-rotated glyph onto the rotated image.
        use super::super::transform::rotate90;
        let b = noise_batch(1, 16, 2);
        let cfg = ShortcutConfig::arrow();
        for k in 0..4usize {
            let canonical = inject_arrow(&b, &cfg, &[0]).unwrap();
            let lhs = rotate90(&canonical.data.index_axis(ndarray::Axis(0), 0), k);
            let rotated_input = ImageBatch::new(
                rotate90(&b.data.index_axis(ndarray::Axis(0), 0), k)
                    .insert_axis(ndarray::Axis(0)),
            );
            let rhs = inject_arrow(&rotated_input, &cfg, &[k]).unwrap();
            let rhs = rhs.data.index_axis(ndarray::Axis(0), 0);
            assert_eq!(lhs, rhs.to_owned(), "commutation fails for k={k}");
        }
    }

    #[test]
    fn out_of_bounds_glyph_is_a_config_error() {
        let b = noise_batch(1, 8, 3);
        let cfg = ShortcutConfig {
            arrow_offset: (4, 4),
            ..ShortcutConfig::arrow()
        };
        assert!(inject_arrow(&b, &cfg, &[0]).unwrap_err().is_config());
    }

    #[test]
    fn chromatic_zero_shift_is_identity_and_constant_images_are_invariant() {
        let b = noise_batch(1, 8, 4);
        let out = inject_chromatic(&b, &ShortcutConfig::chromatic(0)).unwrap();
        assert_eq!(b.data, out.data);
        let flat = ImageBatch::new(Array4::from_elem((1, 8, 8, 3), 0.5));
        let out = inject_chromatic(&flat, &ShortcutConfig::chromatic(2)).unwrap();
        assert_eq!(flat.data, out.data);
    }

    #[test]
    fn chromatic_moves_a_red_dot_right_and_blue_dot_left() {
        let mut data = Array4::<f32>::from_elem((1, 8, 8, 3), -1.0);
        data[(0, 4, 3, 0)] = 1.0; // red dot at column 3
        data[(0, 4, 5, 2)] = 1.0; // blue dot at column 5
        let b = ImageBatch::new(data);
        let out = inject_chromatic(&b, &ShortcutConfig::chromatic(2)).unwrap();
        assert_eq!(out.data[(0, 4, 5, 0)], 1.0); // red now at 3+2
        assert_eq!(out.data[(0, 4, 3, 0)], -1.0);
        assert_eq!(out.data[(0, 4, 3, 2)], 1.0); // blue now at 5-2
        assert_eq!(out.data[(0, 4, 5, 2)], -1.0);
        // green untouched everywhere
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(out.data[(0, r, c, 1)], b.data[(0, r, c, 1)]);
            }
        }
    }

    #[test]
    fn chromatic_shift_wider_than_image_is_a_config_error() {
        let b = noise_batch(1, 8, 5);
        assert!(inject_chromatic(&b, &ShortcutConfig::chromatic(8))
            .unwrap_err()
            .is_config());
    }
}
