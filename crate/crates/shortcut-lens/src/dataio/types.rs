//! Core data containers.

use ndarray::Array4;

use crate::error::{Error, Result};

/// Byte intensity -> [-1, 1]: 0 maps to -1, 255 to +1.
pub fn u8_to_unit(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

/// [-1, 1] -> byte intensity, clamped and rounded.
pub fn unit_to_u8(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// A batch of color images, NHWC with 3 channels, intensities in [-1, 1]
/// after preprocessing. (Augmented network inputs may exceed that range;
/// the invariant applies to what ingestion/preprocessing produce.)
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub data: Array4<f32>,
}

impl ImageBatch {
    pub fn new(data: Array4<f32>) -> Self {
        assert_eq!(data.shape()[3], 3, "ImageBatch: channels-last with 3 channels");
        ImageBatch { data }
    }

    pub fn n(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn h(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn w(&self) -> usize {
        self.data.shape()[2]
    }

    /// Engine layout: (N, 3, H, W).
    pub fn to_nchw(&self) -> Array4<f32> {
        self.data
            .view()
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .into_owned()
    }

    pub fn from_nchw(a: &Array4<f32>) -> Self {
        assert_eq!(a.shape()[1], 3, "from_nchw: expects 3 channels");
        ImageBatch::new(
            a.view()
                .permuted_axes([0, 2, 3, 1])
                .as_standard_layout()
                .into_owned(),
        )
    }

    /// Select a subset of images by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let views: Vec<_> = indices
            .iter()
            .map(|&i| self.data.index_axis(ndarray::Axis(0), i).insert_axis(ndarray::Axis(0)))
            .collect();
        ImageBatch::new(ndarray::concatenate(ndarray::Axis(0), &views).unwrap())
    }
}

/// Images plus downstream class labels. `texture_labels` is present only
/// for cue-conflict sets, where each image has a second label describing
/// its texture class.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: ImageBatch,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub texture_labels: Option<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(images: ImageBatch, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.n() != labels.len() {
            return Err(Error::Shape(format!(
                "dataset: {} images but {} labels",
                images.n(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::DataFormat {
                path: Default::default(),
                detail: format!("label {bad} outside [0, {class_count})"),
            });
        }
        Ok(LabeledDataset {
            images,
            labels,
            class_count,
            texture_labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Deterministic subset (used to shrink experiments).
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        LabeledDataset {
            images: self.images.select(&idx),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
            texture_labels: self.texture_labels.as_ref().map(|t| t[..n].to_vec()),
        }
    }
}
