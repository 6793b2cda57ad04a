//! Model construction and forward passes: the feature extractor, the lens,
//! and per-task heads. All models are generic over the element type so the
//! same code runs in f32 for training and f64 for gradient checks.
//!
//! Graph inputs and activations use NCHW layout; [`crate::dataio::ImageBatch`]
//! converts from its NHWC storage at the boundary.

mod checkpoint;
mod extractor;
mod heads;
mod lens;
pub(crate) mod units;

pub use checkpoint::{load_checkpoint, save_checkpoint, store_arrays, Checkpoint};
pub use extractor::{build_feature_extractor, FeatureExtractor, FeatureExtractorConfig};
pub use heads::{build_task_head, TaskHead, EXEMPLAR_EMBED_DIM};
pub use lens::{build_lens, lens_apply, zero_matching, LensConfig, LensModel, LensVariant};

use ndarray::Array1;

use crate::nn::{El, ParamStore};

/// Which normalization the residual units use. Group statistics keep
/// results independent of batch composition; batch statistics track running
/// moments that must be updated by the training loop (see [`StatUpdate`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Group,
    Batch,
}

/// Batch statistics observed by one batch-norm layer during a training
/// forward pass; the training loop folds them into the store's running
/// moments.
#[derive(Debug, Clone)]
pub struct StatUpdate<F> {
    pub mean_slot: usize,
    pub var_slot: usize,
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

/// Fold observed batch statistics into running moments with the given
/// momentum (running = momentum * running + (1 - momentum) * batch).
pub fn apply_stat_updates<F: El>(
    store: &mut ParamStore<F>,
    updates: &[StatUpdate<F>],
    momentum: f64,
) {
    let m = F::from_f64(momentum);
    let one_m = F::one() - m;
    for u in updates {
        for (slot, batch) in [(u.mean_slot, &u.mean), (u.var_slot, &u.var)] {
            let run = store.value_mut(slot);
            for (r, &b) in run.iter_mut().zip(batch.iter()) {
                *r = m * *r + one_m * b;
            }
        }
    }
}

/// Number of trainable scalars in a parameter store.
pub fn count_parameters<F: El>(store: &ParamStore<F>) -> usize {
    store.count_trainable()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::zeros;

    #[test]
    fn one_by_one_conv_with_bias_counts_twelve() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", zeros::<f32>(&[3, 3, 1, 1]), true);
        store.add("b", zeros::<f32>(&[3]), true);
        assert_eq!(count_parameters(&store), 12);
    }

    #[test]
    fn running_stats_are_excluded_from_parameter_count() {
        let mut store = ParamStore::<f32>::new();
        store.add("gamma", zeros::<f32>(&[8]), true);
        store.add("running_mean", zeros::<f32>(&[8]), false);
        assert_eq!(count_parameters(&store), 8);
    }

    #[test]
    fn stat_updates_fold_with_momentum() {
        let mut store = ParamStore::<f32>::new();
        let m = store.add("rm", zeros::<f32>(&[2]), false);
        let v = store.add("rv", crate::nn::ones::<f32>(&[2]), false);
        let upd = StatUpdate {
            mean_slot: m,
            var_slot: v,
            mean: ndarray::arr1(&[1.0f32, 2.0]),
            var: ndarray::arr1(&[3.0f32, 5.0]),
        };
        apply_stat_updates(&mut store, &[upd], 0.9);
        assert!((store.value(m)[0] - 0.1).abs() < 1e-6);
        assert!((store.value(m)[1] - 0.2).abs() < 1e-6);
        assert!((store.value(v)[0] - (0.9 + 0.3)).abs() < 1e-6);
        assert!((store.value(v)[1] - (0.9 + 0.5)).abs() < 1e-6);
    }
}
