//! Side-by-side PNG panels: what went in, what came out, and an
//! amplified view of what changed.

use std::path::Path;

use ndarray::Array3;

use crate::dataio::unit_to_u8;
use crate::error::{Error, Result};

/// Width of the gap between panel cells, in pixels.
pub const PANEL_SEPARATOR_PX: u32 = 2;

/// Render one row per example with columns `[input | lensed | diff]`.
///
/// All images are HWC in `[-1, 1]`; out-of-range values clamp. The diff
/// column is multiplied by `gain` first, so zero difference renders as
/// mid gray (128) and amplified residuals spread around it. Cells are
/// separated by black gutters of [`PANEL_SEPARATOR_PX`].
pub fn render_panel(
    rows: &[(Array3<f32>, Array3<f32>, Array3<f32>)],
    out_path: &Path,
    gain: f32,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::config("panel needs at least one row"));
    }
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::config(format!("panel gain must be positive, got {gain}")));
    }
    let (h, w, c) = {
        let d = rows[0].0.dim();
        (d.0, d.1, d.2)
    };
    if c != 3 {
        return Err(Error::Shape(format!("panel expects 3-channel images, got {c}")));
    }
    for (i, (input, lensed, diff)) in rows.iter().enumerate() {
        for (name, img) in [("input", input), ("lensed", lensed), ("diff", diff)] {
            if img.dim() != (h, w, 3) {
                return Err(Error::Shape(format!(
                    "panel row {i} {name} is {:?}, expected ({h}, {w}, 3)",
                    img.dim()
                )));
            }
        }
    }

    let sep = PANEL_SEPARATOR_PX;
    let width = 3 * w as u32 + 2 * sep;
    let height = rows.len() as u32 * h as u32 + (rows.len() as u32 - 1) * sep;
    let mut canvas = image::RgbImage::from_pixel(width, height, image::Rgb([0, 0, 0]));

    for (row_i, (input, lensed, diff)) in rows.iter().enumerate() {
        let amplified = diff.mapv(|v| v * gain);
        let top = row_i as u32 * (h as u32 + sep);
        for (col_i, img) in [input, lensed, &amplified].into_iter().enumerate() {
            let left = col_i as u32 * (w as u32 + sep);
            for r in 0..h {
                for cx in 0..w {
                    let px = image::Rgb([
                        unit_to_u8(img[(r, cx, 0)]),
                        unit_to_u8(img[(r, cx, 1)]),
                        unit_to_u8(img[(r, cx, 2)]),
                    ]);
                    canvas.put_pixel(left + cx as u32, top + r as u32, px);
                }
            }
        }
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    canvas.save(out_path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(h: usize, w: usize, v: f32) -> Array3<f32> {
        Array3::from_elem((h, w, 3), v)
    }

    #[test]
    fn two_rows_of_32px_lay_out_with_separators() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.png");
        let rows = vec![
            (flat(32, 32, 0.5), flat(32, 32, 0.5), flat(32, 32, 0.0)),
            (flat(32, 32, -0.5), flat(32, 32, -0.5), flat(32, 32, 0.0)),
        ];
        render_panel(&rows, &path, 5.0).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        // 96x64 content + 2px separators: 2 gutters wide, 1 gutter tall
        assert_eq!(img.width(), 96 + 4);
        assert_eq!(img.height(), 64 + 2);
        // separator pixels are black
        assert_eq!(img.get_pixel(32, 0).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(33, 5).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(0, 32).0, [0, 0, 0]);
    }

    #[test]
    fn zero_diff_renders_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let rows = vec![(flat(4, 4, 0.3), flat(4, 4, 0.3), flat(4, 4, 0.0))];
        render_panel(&rows, &path, 5.0).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        // third column starts at 2*(4+2) = 12
        for r in 0..4 {
            for c in 12..16 {
                assert_eq!(img.get_pixel(c, r).0, [128, 128, 128]);
            }
        }
    }

    #[test]
    fn values_clamp_to_the_byte_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clamp.png");
        let rows = vec![(flat(2, 2, 2.0), flat(2, 2, -2.0), flat(2, 2, 0.1))];
        render_panel(&rows, &path, 5.0).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0).0, [255, 255, 255]); // +2.0 clamps to 255
        assert_eq!(img.get_pixel(4, 0).0, [0, 0, 0]); // −2.0 clamps to 0
        // diff 0.1 at gain 5 → 0.5 → (0.5+1)*127.5 ≈ 191
        assert_eq!(img.get_pixel(8, 0).0, [191, 191, 191]);
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        let rows = vec![(flat(4, 4, 0.0), flat(4, 8, 0.0), flat(4, 4, 0.0))];
        assert!(render_panel(&rows, &path, 5.0).is_err());
        assert!(render_panel(&[], &path, 5.0).is_err());
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let rows = vec![(flat(2, 2, 0.0), flat(2, 2, 0.0), flat(2, 2, 0.0))];
        let err = render_panel(&rows, Path::new("/proc/definitely/not/writable.png"), 5.0)
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. } | Error::Image(_)));
    }
}
