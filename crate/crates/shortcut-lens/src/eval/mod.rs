//! Frozen-representation evaluation: feature extraction (with or without
//! the lens), linear-probe training on top of frozen features, and
//! shape-versus-texture decision scoring on cue-conflict images.

mod features;
mod probe;
mod shapebias;

pub use features::{
    extract_representations, patch_average_representation, FeatureMatrix, Provenance, ReprMode,
};
pub use probe::{
    evaluate_probe, mean_cross_entropy, train_linear_probe, LinearProbe, ProbeConfig, ProbeResult,
};
pub use shapebias::{score_shape_bias, shape_bias_score, ShapeBias};
