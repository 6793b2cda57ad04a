//! The lens: an image-to-image network that adds a learned residual map to
//! its input. Built so that the freshly initialized network is the exact
//! identity (final 1x1 convolution starts at zero).

use ndarray::ArrayD;

use super::units::{Apply, Builder, NormP, UnitP};
use super::{NormKind, StatUpdate};
use crate::dataio::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::{zeros, El, Graph, NodeId, ParamStore, StoreNodes};
use crate::util::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LensVariant {
    /// Encoder-decoder with skip connections; needs input divisible by 2^depth.
    Unet,
    /// Five residual units at constant resolution (for small inputs).
    Flat,
}

/// Lens architecture knobs. `depth` is the number of encoder (and decoder)
/// levels of the unet variant; the flat variant ignores it and always
/// stacks five units. `base_channels` is the width of the shallowest level
/// (doubling per level down to the bottleneck, which stays at the deepest
/// encoder width).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LensConfig {
    pub variant: LensVariant,
    pub depth: usize,
    pub base_channels: usize,
    pub norm: NormKind,
}

impl Default for LensConfig {
    fn default() -> Self {
        Self::unet()
    }
}

impl LensConfig {
    /// Full-scale preset: 4 levels, 64 base channels.
    pub fn unet() -> Self {
        Self {
            variant: LensVariant::Unet,
            depth: 4,
            base_channels: 64,
            norm: NormKind::Group,
        }
    }

    /// Constant-resolution preset for 32px inputs.
    pub fn flat(base_channels: usize) -> Self {
        Self {
            variant: LensVariant::Flat,
            depth: 0,
            base_channels,
            norm: NormKind::Group,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 || self.base_channels % 4 != 0 {
            return Err(Error::config(
                "lens base_channels must be a positive multiple of 4 (bottleneck units expand 4x)",
            ));
        }
        if self.variant == LensVariant::Unet && self.depth == 0 {
            return Err(Error::config("unet lens needs depth >= 1"));
        }
        Ok(())
    }

    /// Channel width of encoder level `i`.
    fn level_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Spatial side length at the bottleneck for a given input side, or a
    /// config error when the input is not divisible by 2^depth.
    pub fn bottleneck_side(&self, input_side: usize) -> Result<usize> {
        let factor = 1usize << self.depth;
        if input_side == 0 || input_side % factor != 0 {
            return Err(Error::config(format!(
                "unet lens with depth {} needs the input side divisible by {factor}, got {input_side}",
                self.depth
            )));
        }
        Ok(input_side / factor)
    }
}

#[derive(Debug, Clone)]
pub struct LensModel<F: El> {
    pub cfg: LensConfig,
    pub params: ParamStore<F>,
    encoder: Vec<UnitP>,
    bottleneck: Vec<UnitP>,
    decoder: Vec<UnitP>,
    flat_units: Vec<UnitP>,
    final_norm: NormP,
    final_w: usize,
    final_b: usize,
}

/// Build with deterministic initialization. The final 1x1 convolution (and
/// its bias) start at zero, so the new lens maps every input to itself.
pub fn build_lens<F: El>(cfg: &LensConfig, seed: u64) -> Result<LensModel<F>> {
    cfg.validate()?;
    let mut params = ParamStore::<F>::new();
    let mut rng = derive_rng(seed, &["lens-init"]);
    let mut b = Builder { store: &mut params, rng: &mut rng, norm: cfg.norm };
    let k = cfg.base_channels;
    let mut encoder = Vec::new();
    let mut bottleneck = Vec::new();
    let mut decoder = Vec::new();
    let mut flat_units = Vec::new();
    match cfg.variant {
        LensVariant::Unet => {
            let n = cfg.depth;
            let mut cin = 3;
            for i in 0..n {
                let cout = cfg.level_channels(i);
                encoder.push(b.unit(&format!("enc{i}"), cin, cout / 4, 1));
                cin = cout;
            }
            let deep = cfg.level_channels(n - 1);
            for j in 0..2 {
                bottleneck.push(b.unit(&format!("bottleneck{j}"), deep, deep / 4, 1));
            }
            let mut prev = deep;
            for i in (0..n).rev() {
                let skip = cfg.level_channels(i);
                let cout = if i == 0 { k } else { cfg.level_channels(i - 1) };
                decoder.push(b.unit(&format!("dec{i}"), prev + skip, cout / 4, 1));
                prev = cout;
            }
        }
        LensVariant::Flat => {
            let mut cin = 3;
            for i in 0..5 {
                flat_units.push(b.unit(&format!("unit{i}"), cin, k / 4, 1));
                cin = k;
            }
        }
    }
    let final_norm = b.norm("final", k);
    let final_w = b.store.add("final/conv/w", zeros::<F>(&[3, k, 1, 1]), true);
    let final_b = b.store.add("final/conv/b", zeros::<F>(&[3]), true);
    Ok(LensModel {
        cfg: cfg.clone(),
        params,
        encoder,
        bottleneck,
        decoder,
        flat_units,
        final_norm,
        final_w,
        final_b,
    })
}

impl<F: El> LensModel<F> {
    /// Forward pass in NCHW. Returns (output, residual_map) nodes where
    /// output = input + residual_map. Gradients flow to both the input and
    /// the lens parameters.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        nodes: &mut StoreNodes,
        x: NodeId,
        train: bool,
        updates: &mut Vec<StatUpdate<F>>,
    ) -> Result<(NodeId, NodeId)> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!(
                "lens expects NCHW input with 3 channels, got {shape:?}"
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        if h != w {
            return Err(Error::Shape(format!("lens expects square input, got {h}x{w}")));
        }
        if self.cfg.variant == LensVariant::Unet {
            self.cfg.bottleneck_side(h)?;
        }
        let mut a = Apply {
            g,
            nodes,
            store: &self.params,
            norm: self.cfg.norm,
            train,
            updates,
        };
        let mut hid = x;
        match self.cfg.variant {
            LensVariant::Unet => {
                let mut skips = Vec::new();
                for unit in &self.encoder {
                    hid = a.unit(unit, hid);
                    skips.push(hid);
                    hid = a.g.maxpool(hid, 2, 2, 0);
                }
                for unit in &self.bottleneck {
                    hid = a.unit(unit, hid);
                }
                for (unit, &skip) in self.decoder.iter().zip(skips.iter().rev()) {
                    hid = a.g.upsample2x(hid);
                    hid = a.g.concat(&[hid, skip], 1);
                    hid = a.unit(unit, hid);
                }
            }
            LensVariant::Flat => {
                for unit in &self.flat_units {
                    hid = a.unit(unit, hid);
                }
            }
        }
        hid = a.norm_relu(&self.final_norm, hid);
        let w_node = a.nodes.node(a.g, a.store, self.final_w);
        let b_node = a.nodes.node(a.g, a.store, self.final_b);
        let residual = a.g.conv2d(hid, w_node, Some(b_node), 1, 0);
        let out = a.g.add(x, residual);
        Ok((out, residual))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count_trainable()
    }
}

/// Run the lens over a batch outside of training (no gradients, eval-mode
/// normalization). Values may leave [-1, 1]; they are clamped only when
/// written out as PNGs.
pub fn lens_apply<F: El>(lens: &LensModel<F>, batch: &ImageBatch) -> Result<ImageBatch> {
    let mut g = Graph::<F>::new();
    let mut nodes = StoreNodes::new(0, &lens.params);
    let nchw = batch.to_nchw();
    let data: ArrayD<F> = nchw.mapv(|v| F::from_f64(v as f64)).into_dyn();
    let x = g.input(data, false);
    let mut updates = Vec::new();
    let (out, _) = lens.forward(&mut g, &mut nodes, x, false, &mut updates)?;
    let value = g.value(out);
    let out4 = value
        .mapv(|v| v.to_f64() as f32)
        .into_dimensionality()
        .expect("lens output is 4-d");
    Ok(ImageBatch::from_nchw(&out4))
}

/// Zero every parameter whose name contains `needle`.
pub fn zero_matching<F: El>(store: &mut ParamStore<F>, needle: &str) {
    for slot in 0..store.len() {
        if store.name(slot).contains(needle) {
            store.value_mut(slot).fill(F::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::noise_batch;

    #[test]
    fn fresh_lens_is_the_exact_identity() {
        for cfg in [LensConfig::flat(8), LensConfig { depth: 2, base_channels: 8, ..LensConfig::unet() }] {
            let lens = build_lens::<f32>(&cfg, 5).unwrap();
            let batch = noise_batch(2, 8, 3, false);
            let out = lens_apply(&lens, &batch).unwrap();
            assert_eq!(out.data, batch.data, "zero residual head must copy the input");
        }
    }

    #[test]
    fn output_shape_matches_input_shape() {
        let lens = build_lens::<f32>(&LensConfig::flat(8), 1).unwrap();
        let batch = noise_batch(3, 16, 4, false);
        let out = lens_apply(&lens, &batch).unwrap();
        assert_eq!(out.data.dim(), batch.data.dim());
    }

    #[test]
    fn bottleneck_spatial_size_and_divisibility() {
        let cfg = LensConfig::unet();
        assert_eq!(cfg.bottleneck_side(224).unwrap(), 14);
        let err = cfg.bottleneck_side(30).unwrap_err();
        assert!(err.is_config());
        // apply-time check: 12 is not divisible by 2^4
        let lens = build_lens::<f32>(&cfg, 2).unwrap();
        let batch = noise_batch(1, 12, 5, false);
        assert!(lens_apply(&lens, &batch).is_err());
    }

    #[test]
    fn full_scale_lens_is_under_a_sixth_of_the_extractor() {
        let lens = build_lens::<f32>(&LensConfig::unet(), 0).unwrap();
        let ex = crate::models::build_feature_extractor::<f32>(
            &crate::models::FeatureExtractorConfig::full(),
            0,
        )
        .unwrap();
        let lp = lens.parameter_count();
        let ep = ex.parameter_count();
        assert!(
            (lp as f64) < (ep as f64) / 6.0,
            "lens {lp} vs extractor {ep}: ratio {:.4}",
            lp as f64 / ep as f64
        );
        assert!(ep > 10_000_000, "full extractor should be tens of millions of weights, got {ep}");
    }

    #[test]
    fn same_seed_rebuilds_identical_lens() {
        let cfg = LensConfig::flat(8);
        let a = build_lens::<f32>(&cfg, 9).unwrap();
        let b = build_lens::<f32>(&cfg, 9).unwrap();
        for (slot, name, value, _) in a.params.iter() {
            assert_eq!(value, b.params.value(slot), "{name} differs");
        }
    }

    #[test]
    fn input_gradient_at_zero_weights_is_the_identity_path() {
        // loss = mean(lens(x)) with a zero residual head: every input
        // coordinate receives exactly 1/len
        let lens = build_lens::<f64>(&LensConfig::flat(4), 3).unwrap();
        let mut g = Graph::<f64>::new();
        let mut nodes = StoreNodes::new(0, &lens.params);
        let data = ArrayD::from_shape_fn(ndarray::IxDyn(&[1, 3, 6, 6]), |ix| {
            ((ix[1] * 36 + ix[2] * 6 + ix[3]) as f64 * 0.37).sin() * 0.5
        });
        let len = data.len() as f64;
        let x = g.input(data, true);
        let mut updates = Vec::new();
        let (out, _) = lens.forward(&mut g, &mut nodes, x, false, &mut updates).unwrap();
        let loss = g.mean(out);
        let grads = g.backward(loss, &crate::nn::Targets::leaf(x));
        let gx = grads.get(x).expect("input gradient present");
        for &v in gx.iter() {
            assert!((v - 1.0 / len).abs() < 1e-12, "got {v}, want {}", 1.0 / len);
        }
    }
}
