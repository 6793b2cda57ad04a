//! The feature extractor: a pre-activation residual network ending in
//! global average pooling.

use super::units::{Apply, Builder, ConvP, NormP, UnitP};
use super::{NormKind, StatUpdate};
use crate::error::{Error, Result};
use crate::nn::{El, Graph, NodeId, ParamStore, StoreNodes};
use crate::util::derive_rng;

/// Architecture knobs. Stage channel widths are derived: the final stage's
/// internal width is 128 x width_factor and earlier stages halve it, so the
/// representation after the 4x bottleneck expansion is always
/// 512 x width_factor wide. The stem is a 3x3 convolution at twice the
/// first stage's width; stages after the first halve the resolution.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureExtractorConfig {
    pub width_factor: usize,
    pub block_counts: Vec<usize>,
    pub input_size: usize,
    pub norm: NormKind,
}

impl Default for FeatureExtractorConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl FeatureExtractorConfig {
    /// Desk-scale preset: widths [32, 64, 128], two units per stage, 32px
    /// inputs, 512-dim representation.
    pub fn desk() -> Self {
        Self {
            width_factor: 1,
            block_counts: vec![2, 2, 2],
            input_size: 32,
            norm: NormKind::Group,
        }
    }

    /// Full-scale preset: the 50-layer stage plan [3,4,6,3] at width factor
    /// 4, giving a 2048-dim representation.
    pub fn full() -> Self {
        Self {
            width_factor: 4,
            block_counts: vec![3, 4, 6, 3],
            input_size: 224,
            norm: NormKind::Batch,
        }
    }

    pub fn stage_count(&self) -> usize {
        self.block_counts.len()
    }

    /// Internal width of stage `i`; outputs are 4x wider.
    pub fn stage_base(&self, i: usize) -> usize {
        (128 >> (self.stage_count() - 1 - i)) * self.width_factor
    }

    pub fn prelogits_dim(&self) -> usize {
        512 * self.width_factor
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_factor == 0 {
            return Err(Error::config("width_factor must be >= 1"));
        }
        let s = self.stage_count();
        if s == 0 || s > 4 || self.block_counts.iter().any(|&c| c == 0) {
            return Err(Error::config(
                "block_counts needs 1..=4 stages with at least one unit each",
            ));
        }
        let downsample = 1usize << (s - 1);
        if self.input_size == 0 || self.input_size % downsample != 0 {
            return Err(Error::config(format!(
                "input size {} is not divisible by the stride schedule ({}x downsampling)",
                self.input_size, downsample
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor<F: El> {
    pub cfg: FeatureExtractorConfig,
    pub params: ParamStore<F>,
    stem: ConvP,
    stages: Vec<Vec<UnitP>>,
    final_norm: NormP,
}

/// Build with deterministic initialization: same (config, seed) gives
/// bit-identical parameters.
pub fn build_feature_extractor<F: El>(
    cfg: &FeatureExtractorConfig,
    seed: u64,
) -> Result<FeatureExtractor<F>> {
    cfg.validate()?;
    let mut params = ParamStore::<F>::new();
    let mut rng = derive_rng(seed, &["extractor-init"]);
    let mut b = Builder { store: &mut params, rng: &mut rng, norm: cfg.norm };
    let stem_ch = 2 * cfg.stage_base(0);
    let stem = b.conv("stem", 3, stem_ch, 3);
    let mut stages = Vec::new();
    let mut cin = stem_ch;
    for (si, &count) in cfg.block_counts.iter().enumerate() {
        let base = cfg.stage_base(si);
        let mut units = Vec::new();
        for ui in 0..count {
            let stride = if si > 0 && ui == 0 { 2 } else { 1 };
            units.push(b.unit(&format!("stage{si}/unit{ui}"), cin, base, stride));
            cin = 4 * base;
        }
        stages.push(units);
    }
    let final_norm = b.norm("final", cin);
    Ok(FeatureExtractor { cfg: cfg.clone(), params, stem, stages, final_norm })
}

impl<F: El> FeatureExtractor<F> {
    /// Forward to the pooled representation [N, prelogits_dim]. Input is
    /// NCHW. Batch-norm configurations append their observed statistics to
    /// `updates` when `train` is set.
    pub fn forward_features(
        &self,
        g: &mut Graph<F>,
        nodes: &mut StoreNodes,
        x: NodeId,
        train: bool,
        updates: &mut Vec<StatUpdate<F>>,
    ) -> NodeId {
        let shape = g.shape(x).to_vec();
        assert_eq!(shape.len(), 4, "extractor expects NCHW input");
        assert_eq!(shape[1], 3, "extractor expects 3 input channels");
        let mut a = Apply {
            g,
            nodes,
            store: &self.params,
            norm: self.cfg.norm,
            train,
            updates,
        };
        let mut h = a.conv(&self.stem, x, 1, 1);
        for stage in &self.stages {
            for unit in stage {
                h = a.unit(unit, h);
            }
        }
        h = a.norm_relu(&self.final_norm, h);
        a.g.gap(h)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count_trainable()
    }
}
