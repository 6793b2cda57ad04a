//! Per-task prediction heads on top of the pooled representation.

use super::StatUpdate;
use crate::error::{Error, Result};
use crate::nn::{he_dense, output_dense, zeros, El, Graph, NodeId, ParamStore, StoreNodes};
use crate::pretext::Task;
use crate::util::derive_rng;

/// Embedding width of the exemplar projection head.
pub const EXEMPLAR_EMBED_DIM: usize = 256;

/// A task head: a linear map for rotation/relpatch/exemplar, a two-layer
/// perceptron (hidden width in_dim/2) for jigsaw.
#[derive(Debug, Clone)]
pub struct TaskHead<F: El> {
    pub task: Task,
    pub params: ParamStore<F>,
    pub in_dim: usize,
    pub out_dim: usize,
    two_layer: bool,
}

/// Build a head for `task` taking `in_dim` features. `class_count` is the
/// number of logits for classification tasks (rotation must be 4, relpatch
/// 8, jigsaw the permutation count); the exemplar head ignores it and
/// projects to [`EXEMPLAR_EMBED_DIM`].
pub fn build_task_head<F: El>(
    task: Task,
    in_dim: usize,
    class_count: usize,
    seed: u64,
) -> Result<TaskHead<F>> {
    if in_dim == 0 {
        return Err(Error::config("head input dimension must be positive"));
    }
    let out_dim = match task {
        Task::Rotation => {
            if class_count != 4 {
                return Err(Error::config("rotation head has exactly 4 classes"));
            }
            4
        }
        Task::Relpatch => {
            if class_count != 8 {
                return Err(Error::config("relative-location head has exactly 8 classes"));
            }
            8
        }
        Task::Jigsaw => {
            if class_count == 0 {
                return Err(Error::config("jigsaw head needs a nonempty permutation set"));
            }
            class_count
        }
        Task::Exemplar => EXEMPLAR_EMBED_DIM,
    };
    let two_layer = task == Task::Jigsaw;
    if two_layer && in_dim < 2 {
        return Err(Error::config("jigsaw head needs in_dim >= 2 for its hidden layer"));
    }
    let mut params = ParamStore::<F>::new();
    let mut rng = derive_rng(seed, &["head-init"]);
    if two_layer {
        let hidden = in_dim / 2;
        params.add("w1", he_dense::<F>((in_dim, hidden), &mut rng), true);
        params.add("b1", zeros::<F>(&[hidden]), true);
        params.add("w2", output_dense::<F>((hidden, out_dim), &mut rng), true);
        params.add("b2", zeros::<F>(&[out_dim]), true);
    } else {
        params.add("w", output_dense::<F>((in_dim, out_dim), &mut rng), true);
        params.add("b", zeros::<F>(&[out_dim]), true);
    }
    Ok(TaskHead { task, params, in_dim, out_dim, two_layer })
}

impl<F: El> TaskHead<F> {
    /// Map features [N, in_dim] to logits (or embeddings) [N, out_dim].
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        nodes: &mut StoreNodes,
        feats: NodeId,
        _updates: &mut Vec<StatUpdate<F>>,
    ) -> NodeId {
        let shape = g.shape(feats).to_vec();
        assert_eq!(shape.len(), 2, "head expects [N, D] features");
        assert_eq!(shape[1], self.in_dim, "head built for {} features", self.in_dim);
        if self.two_layer {
            let w1 = nodes.node(g, &self.params, self.params.slot("w1").unwrap());
            let b1 = nodes.node(g, &self.params, self.params.slot("b1").unwrap());
            let w2 = nodes.node(g, &self.params, self.params.slot("w2").unwrap());
            let b2 = nodes.node(g, &self.params, self.params.slot("b2").unwrap());
            let h = g.dense(feats, w1, Some(b1));
            let h = g.relu(h);
            g.dense(h, w2, Some(b2))
        } else {
            let w = nodes.node(g, &self.params, self.params.slot("w").unwrap());
            let b = nodes.node(g, &self.params, self.params.slot("b").unwrap());
            g.dense(feats, w, Some(b))
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count_trainable()
    }
}
