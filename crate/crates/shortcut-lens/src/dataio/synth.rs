//! Procedural datasets for experiments that need no external data.
//!
//! Three generators, all deterministic in (config, seed):
//! - a 10-class *shape* dataset in CIFAR-10 binary layout: each class is a
//!   distinct glyph drawn at canonical orientation with randomized size,
//!   position, colors, clutter, and pixel noise, so class identity is
//!   carried by shape rather than by color or position, and most classes
//!   are orientation-bearing (a rotation pretext task is solvable from
//!   content);
//! - a *cue-conflict* PNG set where the silhouette comes from one class and
//!   the fill texture from another (for shape-bias scoring);
//! - plain noise batches (for injector validity tests).

use std::path::Path;

use ndarray::{Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::cifar::write_records;
use super::types::{u8_to_unit, ImageBatch};
use crate::error::{Error, Result};
use crate::util::derive_rng;

pub const SIDE: usize = 32;
pub const CLASS_COUNT: usize = 10;

/// Shape mask in the unit square (u right, v down), canonical orientation.
fn shape_mask(class: usize, u: f64, v: f64) -> bool {
    const T: f64 = 0.24; // bar thickness
    match class {
        // T: top bar + center stem
        0 => v < T || (u - 0.5).abs() < T / 2.0,
        // L: left bar + bottom bar
        1 => u < T || v > 1.0 - T,
        // triangle, apex up
        2 => (u - 0.5).abs() <= v / 2.0,
        // U: left + right + bottom bars
        3 => u < T || u > 1.0 - T || v > 1.0 - T,
        // gamma: top bar + left stem
        4 => v < T || u < T,
        // H: two vertical bars + middle rung
        5 => u < T || u > 1.0 - T || (v - 0.5).abs() < T / 2.0,
        // Z: top bar + bottom bar + anti-diagonal
        6 => v < T || v > 1.0 - T || ((1.0 - u) - v).abs() < T * 0.7,
        // staircase ascending to the right
        7 => {
            let step = 1.0 / 3.0;
            (v >= 2.0 * step && u < step + 0.02)
                || ((step..2.0 * step).contains(&v) && (step - 0.02..2.0 * step).contains(&u))
                || (v < step && u >= 2.0 * step - 0.02)
        }
        // exclamation: stem below a detached dot
        8 => {
            ((u - 0.5).abs() < T / 2.0 && v > 0.35)
                || ((u - 0.5).abs() < 0.18 && v < 0.22)
        }
        // E: left bar + three half-length rungs
        9 => {
            u < T || (v < T && u < 0.85)
                || ((v - 0.5).abs() < T / 2.0 && u < 0.85)
                || (v > 1.0 - T && u < 0.85)
        }
        _ => unreachable!("class out of range"),
    }
}

/// Saturated foreground color: channels get high/mid/low intensities in a
/// random permutation, keeping strong edges in every channel.
fn fg_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    let hi = rng.random_range(180..=255u16) as u8;
    let mid = rng.random_range(60..=170u16) as u8;
    let lo = rng.random_range(0..=50u16) as u8;
    let mut color = [hi, mid, lo];
    // Fisher-Yates over three entries
    for i in (1..3).rev() {
        let j = rng.random_range(0..=i);
        color.swap(i, j);
    }
    color
}

/// Render one shape image: dim noisy background, one clutter rectangle,
/// then the class glyph at random scale/position with 2x2 supersampled
/// edges.
fn render_shape(class: usize, rng: &mut ChaCha8Rng) -> Array3<u8> {
    let bg: [u8; 3] = [
        rng.random_range(20..=95u16) as u8,
        rng.random_range(20..=95u16) as u8,
        rng.random_range(20..=95u16) as u8,
    ];
    let mut img = Array3::<u8>::from_shape_fn((SIDE, SIDE, 3), |(_, _, ch)| bg[ch]);
    // clutter: one small random rectangle behind the glyph
    let cw = rng.random_range(3..=6usize);
    let chh = rng.random_range(3..=6usize);
    let cr = rng.random_range(0..SIDE - chh);
    let cc = rng.random_range(0..SIDE - cw);
    let ccol = fg_color(rng);
    for r in cr..cr + chh {
        for c in cc..cc + cw {
            for ch in 0..3 {
                img[(r, c, ch)] = ccol[ch];
            }
        }
    }
    // glyph box
    let s = rng.random_range(16..=24usize);
    let oy = rng.random_range(1..SIDE - s);
    let ox = rng.random_range(1..SIDE - s);
    let fg = fg_color(rng);
    for r in 0..s {
        for c in 0..s {
            // 2x2 supersampling for soft edges
            let mut cover = 0.0f64;
            for (dy, dx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let v = (r as f64 + dy) / s as f64;
                let u = (c as f64 + dx) / s as f64;
                if shape_mask(class, u, v) {
                    cover += 0.25;
                }
            }
            if cover > 0.0 {
                for ch in 0..3 {
                    let base = img[(oy + r, ox + c, ch)] as f64;
                    let val = base + (fg[ch] as f64 - base) * cover;
                    img[(oy + r, ox + c, ch)] = val.round() as u8;
                }
            }
        }
    }
    // pixel noise
    for v in img.iter_mut() {
        let noise = rng.random_range(-10i16..=10);
        *v = (*v as i16 + noise).clamp(0, 255) as u8;
    }
    img
}

/// Write a shape dataset in CIFAR-10 binary layout: `train_n` images split
/// over data_batch_1..5.bin plus `test_n` in test_batch.bin. Labels cycle
/// 0..9 so classes are balanced.
pub fn write_shape_dataset(dir: &Path, train_n: usize, test_n: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let gen = |count: usize, tag: &str, offset: usize| -> (Vec<Array3<u8>>, Vec<usize>) {
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = (offset + i) % CLASS_COUNT;
            let mut rng = derive_rng(seed, &["synth-shape", tag, &(offset + i).to_string()]);
            images.push(render_shape(class, &mut rng));
            labels.push(class);
        }
        (images, labels)
    };
    let (train_imgs, train_labels) = gen(train_n, "train", 0);
    let per = train_n.div_ceil(5);
    for b in 0..5 {
        let lo = (b * per).min(train_n);
        let hi = ((b + 1) * per).min(train_n);
        write_records(
            &dir.join(format!("data_batch_{}.bin", b + 1)),
            &train_imgs[lo..hi],
            &train_labels[lo..hi],
        )?;
    }
    let (test_imgs, test_labels) = gen(test_n, "test", 0);
    write_records(&dir.join("test_batch.bin"), &test_imgs, &test_labels)?;
    Ok(())
}

/// Texture fill value for cue-conflict images.
fn texture_color(texture: usize, r: usize, c: usize, colors: ([u8; 3], [u8; 3])) -> [u8; 3] {
    let (a, b) = colors;
    let pick = |on: bool| if on { a } else { b };
    match texture {
        0 => pick((r / 3) % 2 == 0),                    // horizontal stripes
        1 => pick((c / 3) % 2 == 0),                    // vertical stripes
        2 => pick((r / 4 + c / 4) % 2 == 0),            // checker
        3 => pick(r % 5 < 2 && c % 5 < 2),              // dot grid
        4 => pick(((r + c) / 3) % 2 == 0),              // diagonal stripes
        5 => a,                                          // solid
        6 => b,                                          // solid (other color)
        7 => {
            // left-right gradient between the two colors
            let t = c as f64 / (SIDE - 1) as f64;
            [
                (a[0] as f64 * (1.0 - t) + b[0] as f64 * t) as u8,
                (a[1] as f64 * (1.0 - t) + b[1] as f64 * t) as u8,
                (a[2] as f64 * (1.0 - t) + b[2] as f64 * t) as u8,
            ]
        }
        8 => {
            let t = r as f64 / (SIDE - 1) as f64;
            [
                (a[0] as f64 * (1.0 - t) + b[0] as f64 * t) as u8,
                (a[1] as f64 * (1.0 - t) + b[1] as f64 * t) as u8,
                (a[2] as f64 * (1.0 - t) + b[2] as f64 * t) as u8,
            ]
        }
        9 => pick((r * 7 + c * 13) % 5 < 2),            // deterministic speckle
        _ => unreachable!(),
    }
}

/// Write a cue-conflict set: silhouette from `shape` class, fill from a
/// different `texture` class. PNGs plus labels.csv rows
/// `filename,shape_label,texture_label`.
pub fn write_cue_conflict(dir: &Path, n: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::new();
    for i in 0..n {
        let shape = i % CLASS_COUNT;
        let texture = (shape + 1 + (i / CLASS_COUNT) % (CLASS_COUNT - 1)) % CLASS_COUNT;
        debug_assert_ne!(shape, texture);
        let mut rng = derive_rng(seed, &["cue-conflict", &i.to_string()]);
        let bg = rng.random_range(25..=70u16) as u8;
        let ca = fg_color(&mut rng);
        let cb = fg_color(&mut rng);
        let s = rng.random_range(20..=26usize);
        let oy = rng.random_range(1..SIDE - s);
        let ox = rng.random_range(1..SIDE - s);
        let mut img = image::RgbImage::from_pixel(SIDE as u32, SIDE as u32, image::Rgb([bg, bg, bg]));
        for r in 0..s {
            for c in 0..s {
                let v = (r as f64 + 0.5) / s as f64;
                let u = (c as f64 + 0.5) / s as f64;
                if shape_mask(shape, u, v) {
                    let col = texture_color(texture, oy + r, ox + c, (ca, cb));
                    img.put_pixel((ox + c) as u32, (oy + r) as u32, image::Rgb(col));
                }
            }
        }
        let name = format!("cc_{i:04}.png");
        img.save(dir.join(&name))?;
        csv.push_str(&format!("{name},{shape},{texture}\n"));
    }
    std::fs::write(dir.join("labels.csv"), csv).map_err(|e| Error::io(dir.join("labels.csv"), e))
}

/// Uniform noise images in [-1, 1]. With `grayish`, channels share one base
/// value per pixel plus small independent perturbations, giving the
/// channel-correlated statistics a chromatic shift is detectable against.
pub fn noise_batch(n: usize, side: usize, seed: u64, grayish: bool) -> ImageBatch {
    let mut rng = derive_rng(seed, &["noise-batch"]);
    let mut data = Array4::<f32>::zeros((n, side, side, 3));
    for i in 0..n {
        for r in 0..side {
            for c in 0..side {
                if grayish {
                    let base: u8 = rng.random_range(0..=255);
                    for ch in 0..3 {
                        let jitter = rng.random_range(-12i16..=12);
                        data[(i, r, c, ch)] =
                            u8_to_unit((base as i16 + jitter).clamp(0, 255) as u8);
                    }
                } else {
                    for ch in 0..3 {
                        data[(i, r, c, ch)] = u8_to_unit(rng.random_range(0..=255u8));
                    }
                }
            }
        }
    }
    ImageBatch::new(data)
}
