//! Shape-vs-texture decision scoring on cue-conflict images: images whose
//! shape says one class and whose texture says another.

use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::features::{extract_representations, ReprMode};
use crate::eval::probe::LinearProbe;
use crate::models::{FeatureExtractor, LensModel};

/// Outcome counts of a cue-conflict evaluation. `score` is the fraction
/// of decisions that sided with shape among those that sided with either
/// cue; it is `None` when every prediction matched neither label, which
/// leaves the bias undetermined rather than zero.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapeBias {
    pub shape_matches: usize,
    pub texture_matches: usize,
    pub undetermined: usize,
    pub score: Option<f64>,
}

/// Score predictions against paired shape/texture labels.
///
/// A prediction counts for shape when it equals the shape label, for
/// texture when it equals the texture label, and is excluded when it
/// matches neither. Every pair must genuinely conflict (shape ≠ texture).
pub fn score_shape_bias(
    predictions: &[usize],
    shapes: &[usize],
    textures: &[usize],
) -> Result<ShapeBias> {
    if predictions.len() != shapes.len() || shapes.len() != textures.len() {
        return Err(Error::Shape(format!(
            "mismatched lengths: {} predictions, {} shape labels, {} texture labels",
            predictions.len(),
            shapes.len(),
            textures.len()
        )));
    }
    if let Some(i) = shapes.iter().zip(textures.iter()).position(|(s, t)| s == t) {
        return Err(Error::config(format!(
            "image {i} has shape label == texture label ({}); not a cue conflict",
            shapes[i]
        )));
    }
    let mut shape_matches = 0usize;
    let mut texture_matches = 0usize;
    let mut undetermined = 0usize;
    for ((&p, &s), &t) in predictions.iter().zip(shapes).zip(textures) {
        if p == s {
            shape_matches += 1;
        } else if p == t {
            texture_matches += 1;
        } else {
            undetermined += 1;
        }
    }
    let denom = shape_matches + texture_matches;
    Ok(ShapeBias {
        shape_matches,
        texture_matches,
        undetermined,
        score: if denom == 0 {
            None
        } else {
            Some(shape_matches as f64 / denom as f64)
        },
    })
}

/// Extract representations of a cue-conflict dataset, classify them with
/// `probe`, and score the decisions. `data.labels` are the shape labels;
/// the dataset must carry texture labels.
pub fn shape_bias_score(
    extractor: &FeatureExtractor<f32>,
    lens: Option<&LensModel<f32>>,
    mode: ReprMode,
    probe: &LinearProbe,
    data: &LabeledDataset,
) -> Result<ShapeBias> {
    let textures = data.texture_labels.as_ref().ok_or_else(|| {
        Error::config("cue-conflict scoring needs a dataset with texture labels")
    })?;
    let feats = extract_representations(
        extractor,
        lens,
        &data.images,
        &data.labels,
        data.class_count,
        mode,
        "cue-conflict",
    )?;
    let preds = probe.predict(&feats.features)?;
    score_shape_bias(&preds, &data.labels, textures)
}
