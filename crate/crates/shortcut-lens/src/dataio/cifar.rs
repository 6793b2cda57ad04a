//! CIFAR-10 binary batch ingestion.
//!
//! Record layout: 1 label byte + 3072 pixel bytes (three 1024-byte channel
//! planes R, G, B; row-major within each plane), 3073 bytes per record.

use std::path::{Path, PathBuf};

use ndarray::Array4;

use super::types::{u8_to_unit, ImageBatch, LabeledDataset};
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 3073;
const SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Load CIFAR-10 binary batches from `path` (the directory holding
/// `data_batch_*.bin` / `test_batch.bin`, or its parent containing the
/// conventional `cifar-10-batches-bin` directory).
pub fn load_cifar10(path: &Path, split: Split) -> Result<LabeledDataset> {
    let dir = resolve_dir(path)?;
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    let mut images: Vec<f32> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for file in &files {
        let bytes = std::fs::read(file).map_err(|e| Error::io(file, e))?;
        if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
            let offset = bytes.len() - bytes.len() % RECORD_BYTES;
            return Err(Error::DataFormat {
                path: file.clone(),
                detail: format!(
                    "truncated batch: {} bytes is not a multiple of {RECORD_BYTES} \
                     (last whole record ends at byte {offset})",
                    bytes.len()
                ),
            });
        }
        for (rec_idx, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
            let label = rec[0] as usize;
            if label >= 10 {
                return Err(Error::DataFormat {
                    path: file.clone(),
                    detail: format!(
                        "label byte {label} out of range at byte offset {}",
                        rec_idx * RECORD_BYTES
                    ),
                });
            }
            labels.push(label);
            // planes R,G,B -> HWC
            let px = &rec[1..];
            for r in 0..SIDE {
                for c in 0..SIDE {
                    for ch in 0..3 {
                        images.push(u8_to_unit(px[ch * SIDE * SIDE + r * SIDE + c]));
                    }
                }
            }
        }
    }
    let n = labels.len();
    let data = Array4::from_shape_vec((n, SIDE, SIDE, 3), images)
        .expect("cifar: shape bookkeeping");
    LabeledDataset::new(ImageBatch::new(data), labels, 10)
}

fn resolve_dir(path: &Path) -> Result<PathBuf> {
    if path.join("test_batch.bin").exists() || path.join("data_batch_1.bin").exists() {
        return Ok(path.to_path_buf());
    }
    let nested = path.join("cifar-10-batches-bin");
    if nested.join("test_batch.bin").exists() || nested.join("data_batch_1.bin").exists() {
        return Ok(nested);
    }
    Err(Error::io(
        path.join("data_batch_1.bin"),
        std::io::Error::new(std::io::ErrorKind::NotFound, "no CIFAR-10 batches here"),
    ))
}

/// Serialize images+labels into CIFAR-10 binary records (inverse of the
/// loader's byte handling; used by the synthetic dataset writer).
pub(crate) fn write_records(
    file: &Path,
    images: &[ndarray::Array3<u8>],
    labels: &[usize],
) -> Result<()> {
    assert_eq!(images.len(), labels.len());
    let mut buf = Vec::with_capacity(images.len() * RECORD_BYTES);
    for (img, &label) in images.iter().zip(labels) {
        assert_eq!(img.dim(), (SIDE, SIDE, 3), "write_records: 32x32x3 only");
        buf.push(label as u8);
        for ch in 0..3 {
            for r in 0..SIDE {
                for c in 0..SIDE {
                    buf.push(img[(r, c, ch)]);
                }
            }
        }
    }
    std::fs::write(file, &buf).map_err(|e| Error::io(file, e))
}
