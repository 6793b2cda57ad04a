//! Single-step input-gradient perturbation: the non-lens mitigation
//! baseline. Each pretext example is pushed along the sign of the input
//! gradient of the pretext loss by its own randomly drawn magnitude.

use ndarray::ArrayD;

use crate::error::Result;
use crate::models::{FeatureExtractor, TaskHead};
use crate::nn::{Graph, Targets};
use crate::pretext::PretextBatch;
use crate::util::{derive_rng, truncated_normal_f64};

use super::losses::{batch_tensors, batch_with_tensors, build_task_forward, ForwardCfg};
use super::FgsmConfig;

/// Per-example perturbation magnitudes: `|TruncNormal(0, epsilon)|`
/// truncated at two standard deviations, so every magnitude lies in
/// `[0, 2 epsilon]`. Deterministic in `(seed, index)` alone, independent
/// of batch composition.
pub(crate) fn draw_magnitudes(n: usize, epsilon: f64, seed: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if epsilon == 0.0 {
                return 0.0;
            }
            let mut rng = derive_rng(seed, &["fgsm", &i.to_string()]);
            truncated_normal_f64(&mut rng, epsilon, 2.0 * epsilon).abs()
        })
        .collect()
}

/// Perturb every input tensor of `batch` adversarially against the
/// pretext loss: example `i` moves by `eps_i * sign(gradient)` per pixel,
/// where `eps_i` is its drawn magnitude and pixels with zero gradient stay
/// put. The maximum absolute change of example `i` is therefore exactly
/// `eps_i` (up to one float rounding step of the addition) wherever its
/// gradient has any nonzero entry, and never exceeds `2 * epsilon`.
///
/// The forward pass runs with batch statistics (training mode) to match
/// the conditions the loss is optimized under, but the observed statistics
/// are discarded rather than folded into the running averages.
pub fn fgsm_perturb(
    extractor: &FeatureExtractor<f32>,
    head: &TaskHead<f32>,
    batch: &PretextBatch,
    margin: f64,
    cfg: &FgsmConfig,
    seed: u64,
) -> Result<PretextBatch> {
    cfg.validate()?;
    if cfg.epsilon == 0.0 {
        return Ok(batch.clone());
    }
    let mut g = Graph::new();
    let fwd = build_task_forward(
        &mut g,
        &ForwardCfg {
            extractor,
            head,
            lens: None,
            feed_raw: false,
            margin,
            train: true,
            input_grad: true,
        },
        batch,
    )?;
    let grads = g.backward(
        fwd.loss_all,
        &Targets {
            stores: Vec::new(),
            leaves: fwd.leaves.clone(),
        },
    );
    let eps = draw_magnitudes(batch.len(), cfg.epsilon, seed);

    let tensors = batch_tensors(batch)?;
    let mut perturbed = Vec::with_capacity(tensors.len());
    for (leaf, x) in fwd.leaves.iter().zip(&tensors) {
        let mut out = x.clone();
        if let Some(grad) = grads.get(*leaf) {
            apply_signed_step(&mut out, grad, &eps);
        }
        perturbed.push(out);
    }
    batch_with_tensors(batch, &perturbed)
}

/// `x[i] += eps[i] * sign(g[i])` over NCHW rows; `sign(0) = 0`.
fn apply_signed_step(x: &mut ArrayD<f32>, g: &ArrayD<f32>, eps: &[f64]) {
    assert_eq!(x.shape(), g.shape(), "fgsm: gradient shape");
    assert_eq!(x.shape()[0], eps.len(), "fgsm: one magnitude per example");
    let per_example = x.len() / eps.len();
    let xs = x.as_slice_mut().expect("standard layout");
    let gs = g.as_slice().expect("standard layout");
    for (i, &e) in eps.iter().enumerate() {
        let ef = e as f32;
        for j in i * per_example..(i + 1) * per_example {
            if gs[j] > 0.0 {
                xs[j] += ef;
            } else if gs[j] < 0.0 {
                xs[j] -= ef;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ImageBatch;
    use crate::models::{build_feature_extractor, build_task_head, FeatureExtractorConfig};
    use crate::pretext::{make_rotation_batch, PretextInputs, Task};
    use crate::util::derive_rng;
    use ndarray::Array4;
    use rand::Rng;

    fn tiny() -> (FeatureExtractor<f32>, TaskHead<f32>) {
        let cfg = FeatureExtractorConfig {
            width_factor: 1,
            block_counts: vec![1],
            input_size: 8,
            ..FeatureExtractorConfig::desk()
        };
        let f = build_feature_extractor(&cfg, 21).unwrap();
        let head = build_task_head(Task::Rotation, 512, 4, 22).unwrap();
        (f, head)
    }

    fn images(n: usize, seed: u64) -> ImageBatch {
        let mut rng = derive_rng(seed, &["fgsm-test"]);
        let mut data = Array4::<f32>::zeros((n, 8, 8, 3));
        for v in data.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        ImageBatch::new(data)
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let (f, head) = tiny();
        let batch = make_rotation_batch(&images(2, 1)).unwrap();
        let out = fgsm_perturb(&f, &head, &batch, 0.5, &FgsmConfig { epsilon: 0.0 }, 7).unwrap();
        let (PretextInputs::Images(a), PretextInputs::Images(b)) = (&batch.inputs, &out.inputs)
        else {
            panic!("rotation batches hold whole images")
        };
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn magnitudes_are_bounded_and_deterministic() {
        let eps = draw_magnitudes(64, 0.08, 3);
        assert!(eps.iter().all(|&e| (0.0..=0.16).contains(&e)));
        assert!(eps.iter().any(|&e| e > 0.0));
        assert_eq!(eps, draw_magnitudes(64, 0.08, 3));
        assert_ne!(eps, draw_magnitudes(64, 0.08, 4));
        // Prefix stability: the magnitude of example i does not depend on
        // how many examples follow it.
        assert_eq!(eps[..16], draw_magnitudes(16, 0.08, 3)[..]);
    }

    #[test]
    fn perturbation_is_per_example_linf_exact() {
        let (f, head) = tiny();
        let batch = make_rotation_batch(&images(3, 2)).unwrap();
        let cfg = FgsmConfig { epsilon: 0.05 };
        let out = fgsm_perturb(&f, &head, &batch, 0.5, &cfg, 11).unwrap();
        let eps = draw_magnitudes(batch.len(), cfg.epsilon, 11);
        let (PretextInputs::Images(a), PretextInputs::Images(b)) = (&batch.inputs, &out.inputs)
        else {
            panic!()
        };
        for i in 0..batch.len() {
            let xa = a.data.index_axis(ndarray::Axis(0), i);
            let xb = b.data.index_axis(ndarray::Axis(0), i);
            let linf = xa
                .iter()
                .zip(xb.iter())
                .map(|(&p, &q)| (p - q).abs())
                .fold(0.0f32, f32::max);
            let want = eps[i] as f32;
            // Exact up to the rounding of one f32 addition.
            assert!(
                (linf - want).abs() <= want * 1e-6 + f32::EPSILON,
                "example {i}: moved {linf}, drew {want}"
            );
            assert!(linf <= 2.0 * cfg.epsilon as f32 * (1.0 + 1e-6));
        }
    }

    #[test]
    fn linear_loss_gradient_direction_oracle() {
        // Loss = mean over examples of w . x_i with fixed weights: the
        // input gradient of example i is w / n, so the step direction is
        // sign(w) exactly, for every example.
        let mut g = Graph::<f32>::new();
        let n = 2usize;
        let d = 3 * 4 * 4;
        let x0 = ArrayD::from_shape_fn(ndarray::IxDyn(&[n, 3, 4, 4]), |ix| {
            (ix[1] as f32 - 1.0) * 0.1
        });
        let x = g.input(x0.clone(), true);
        let flat = g.reshape(x, &[n, d]);
        let w0 =
            ArrayD::from_shape_fn(ndarray::IxDyn(&[d, 1]), |ix| {
                if ix[0] % 2 == 0 {
                    1.5
                } else {
                    -0.5
                }
            });
        let w = g.input(w0.clone(), false);
        let scores = g.dense(flat, w, None);
        let loss = g.mean(scores);
        let grads = g.backward(loss, &Targets::leaf(x));
        let grad = grads.get(x).unwrap();
        // Analytic check: gradient of example i, feature j is w[j] / n.
        for (ix, &gv) in grad.iter().enumerate() {
            let j = ix % d;
            let want = w0[[j, 0]] / n as f32;
            assert!((gv - want).abs() < 1e-7, "grad[{ix}] = {gv}, want {want}");
        }
        let eps = [0.03f64, 0.07];
        let mut out = x0.clone();
        apply_signed_step(&mut out, grad, &eps);
        for (ix, (&before, &after)) in x0.iter().zip(out.iter()).enumerate() {
            let i = ix / d;
            let sign = if (ix % d) % 2 == 0 { 1.0 } else { -1.0 };
            let want = before + eps[i] as f32 * sign;
            assert_eq!(after, want, "flat index {ix}");
        }
    }
}
