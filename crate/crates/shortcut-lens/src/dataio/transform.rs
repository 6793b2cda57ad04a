//! Exact image transforms shared across modules.

use ndarray::{Array3, ArrayView3};

/// Rotate a square HWC image by k*90 degrees counter-clockwise as an exact
/// pixel permutation: one CCW quarter turn maps (r, c) to (W-1-c, r).
pub fn rotate90(img: &ArrayView3<f32>, k: usize) -> Array3<f32> {
    let (h, w, ch) = img.dim();
    let k = k % 4;
    if k == 0 {
        return img.to_owned();
    }
    assert_eq!(h, w, "rotate90: image must be square");
    let mut out = Array3::<f32>::zeros((h, w, ch));
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = rotate_coord(r, c, w, k);
            for q in 0..ch {
                out[(nr, nc, q)] = img[(r, c, q)];
            }
        }
    }
    out
}

/// Where (r, c) lands after k CCW quarter turns of a side x side image.
pub fn rotate_coord(r: usize, c: usize, side: usize, k: usize) -> (usize, usize) {
    let mut rr = r;
    let mut cc = c;
    for _ in 0..(k % 4) {
        let nr = side - 1 - cc;
        let nc = rr;
        rr = nr;
        cc = nc;
    }
    (rr, cc)
}

/// Bilinear resize with half-pixel centers and edge clamping. An identical
/// input/output size copies bits exactly.
pub fn resize_bilinear(img: &ArrayView3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, ch) = img.dim();
    if out_h == h && out_w == w {
        return img.to_owned();
    }
    let taps = |len_out: usize, len_in: usize| -> Vec<(usize, usize, f32)> {
        let scale = len_in as f64 / len_out as f64;
        (0..len_out)
            .map(|o| {
                let src = (o as f64 + 0.5) * scale - 0.5;
                if src <= 0.0 {
                    (0, 0, 0.0)
                } else if src >= (len_in - 1) as f64 {
                    (len_in - 1, len_in - 1, 0.0)
                } else {
                    let lo = src.floor() as usize;
                    (lo, lo + 1, (src - lo as f64) as f32)
                }
            })
            .collect()
    };
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    let mut out = Array3::<f32>::zeros((out_h, out_w, ch));
    for (oy, &(ylo, yhi, wy)) in ty.iter().enumerate() {
        for (ox, &(xlo, xhi, wx)) in tx.iter().enumerate() {
            for q in 0..ch {
                let top = img[(ylo, xlo, q)] * (1.0 - wx) + img[(ylo, xhi, q)] * wx;
                let bot = img[(yhi, xlo, q)] * (1.0 - wx) + img[(yhi, xhi, q)] * wx;
                out[(oy, ox, q)] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}
