//! PNG-folder ingestion with CSV labels.
//!
//! The CSV is header-less `filename,label` rows (a third column adds a
//! texture label for cue-conflict sets). Rows are sorted lexicographically
//! by filename so dataset order never depends on filesystem enumeration.

use std::path::Path;

use ndarray::{Array3, Array4, Axis};

use super::transform::resize_bilinear;
use super::types::{u8_to_unit, ImageBatch, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UndecodablePolicy {
    Fail,
    Skip,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FolderConfig {
    /// Resize decoded images to this square side; None keeps native size
    /// (all images must then share dimensions).
    pub resize: Option<usize>,
    pub on_undecodable: UndecodablePolicy,
}

impl Default for FolderConfig {
    fn default() -> Self {
        FolderConfig {
            resize: None,
            on_undecodable: UndecodablePolicy::Fail,
        }
    }
}

/// Load a directory of PNGs with a CSV mapping filename -> label.
pub fn load_image_folder(
    dir: &Path,
    labels_file: &Path,
    cfg: &FolderConfig,
) -> Result<LabeledDataset> {
    let csv = std::fs::read_to_string(labels_file).map_err(|e| Error::io(labels_file, e))?;
    let mut rows: Vec<(String, usize, Option<usize>)> = Vec::new();
    for (lineno, line) in csv.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(Error::DataFormat {
                path: labels_file.to_path_buf(),
                detail: format!("line {}: expected filename,label[,texture]", lineno + 1),
            });
        }
        let label: usize = parts[1].parse().map_err(|_| Error::DataFormat {
            path: labels_file.to_path_buf(),
            detail: format!("line {}: label {:?} is not an integer", lineno + 1, parts[1]),
        })?;
        let texture = match parts.get(2) {
            Some(t) => Some(t.parse().map_err(|_| Error::DataFormat {
                path: labels_file.to_path_buf(),
                detail: format!("line {}: texture {:?} is not an integer", lineno + 1, parts[2]),
            })?),
            None => None,
        };
        rows.push((parts[0].to_string(), label, texture));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));

    let mut images: Vec<Array3<f32>> = Vec::new();
    let mut labels = Vec::new();
    let mut textures = Vec::new();
    let mut any_texture = false;
    for (name, label, texture) in &rows {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::io(
                &path,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("listed in {} but missing", labels_file.display()),
                ),
            ));
        }
        let decoded = image::open(&path);
        let img = match decoded {
            Ok(img) => img.to_rgb8(),
            Err(e) => match cfg.on_undecodable {
                UndecodablePolicy::Fail => return Err(e.into()),
                UndecodablePolicy::Skip => {
                    eprintln!("warning: skipping undecodable image {}: {e}", path.display());
                    continue;
                }
            },
        };
        let (w, h) = img.dimensions();
        let mut arr = Array3::<f32>::zeros((h as usize, w as usize, 3));
        for (x, y, px) in img.enumerate_pixels() {
            for ch in 0..3 {
                arr[(y as usize, x as usize, ch)] = u8_to_unit(px.0[ch]);
            }
        }
        let arr = match cfg.resize {
            Some(side) => resize_bilinear(&arr.view(), side, side),
            None => arr,
        };
        images.push(arr);
        labels.push(*label);
        if let Some(t) = texture {
            textures.push(*t);
            any_texture = true;
        } else {
            textures.push(0);
        }
    }
    if images.is_empty() {
        return Err(Error::DataFormat {
            path: labels_file.to_path_buf(),
            detail: "no images loaded".into(),
        });
    }
    let dims = images[0].dim();
    if let Some(bad) = images.iter().position(|im| im.dim() != dims) {
        return Err(Error::DataFormat {
            path: dir.to_path_buf(),
            detail: format!(
                "image {} has size {:?}, expected {:?}; set a resize target",
                bad,
                images[bad].dim(),
                dims
            ),
        });
    }
    let mut data = Array4::<f32>::zeros((images.len(), dims.0, dims.1, 3));
    for (i, img) in images.iter().enumerate() {
        data.index_axis_mut(Axis(0), i).assign(img);
    }
    let class_count = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut ds = LabeledDataset::new(ImageBatch::new(data), labels, class_count)?;
    if any_texture {
        ds.texture_labels = Some(textures);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, side: u32, rgb: [u8; 3]) {
        let img = image::RgbImage::from_pixel(side, side, image::Rgb(rgb));
        img.save(path).unwrap();
    }

    #[test]
    fn loads_csv_listed_files_in_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("b.png"), 4, [0, 0, 0]);
        write_png(&dir.path().join("a.png"), 4, [255, 255, 255]);
        write_png(&dir.path().join("c.png"), 4, [128, 128, 128]);
        let csv = dir.path().join("labels.csv");
        std::fs::write(&csv, "b.png,1\nc.png,2\na.png,0\n").unwrap();
        let ds = load_image_folder(dir.path(), &csv, &FolderConfig::default()).unwrap();
        assert_eq!(ds.len(), 3);
        // sorted by filename: a, b, c
        assert_eq!(ds.labels, vec![0, 1, 2]);
        assert_eq!(ds.images.data[(0, 0, 0, 0)], 1.0); // a.png is white
        assert_eq!(ds.images.data[(1, 0, 0, 0)], -1.0); // b.png is black
    }

    #[test]
    fn one_by_one_white_png_maps_to_plus_one() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("w.png"), 1, [255, 255, 255]);
        let csv = dir.path().join("labels.csv");
        std::fs::write(&csv, "w.png,0\n").unwrap();
        let ds = load_image_folder(dir.path(), &csv, &FolderConfig::default()).unwrap();
        assert_eq!(ds.images.data.shape(), &[1, 1, 1, 3]);
        for &v in ds.images.data.iter() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn missing_file_error_names_the_filename() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("labels.csv");
        std::fs::write(&csv, "ghost.png,0\n").unwrap();
        let err = load_image_folder(dir.path(), &csv, &FolderConfig::default()).unwrap_err();
        assert!(err.to_string().contains("ghost.png"), "{err}");
    }

    #[test]
    fn undecodable_skip_policy_warns_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("ok.png"), 4, [10, 20, 30]);
        std::fs::write(dir.path().join("bad.png"), b"not a png").unwrap();
        let csv = dir.path().join("labels.csv");
        std::fs::write(&csv, "ok.png,1\nbad.png,0\n").unwrap();
        let fail = load_image_folder(dir.path(), &csv, &FolderConfig::default());
        assert!(fail.is_err());
        let cfg = FolderConfig {
            on_undecodable: UndecodablePolicy::Skip,
            ..Default::default()
        };
        let ds = load_image_folder(dir.path(), &csv, &cfg).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![1]);
    }

    #[test]
    fn three_column_csv_carries_texture_labels() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("x.png"), 4, [1, 2, 3]);
        write_png(&dir.path().join("y.png"), 4, [1, 2, 3]);
        let csv = dir.path().join("labels.csv");
        std::fs::write(&csv, "x.png,0,5\ny.png,3,1\n").unwrap();
        let ds = load_image_folder(dir.path(), &csv, &FolderConfig::default()).unwrap();
        assert_eq!(ds.texture_labels, Some(vec![5, 1]));
    }
}
