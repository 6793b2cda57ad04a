//! Pretext-task example construction and losses.
//!
//! Four self-supervision tasks are supported:
//! - **rotation**: classify which of four quarter-turns an image received;
//! - **exemplar**: pull augmented copies of the same image together with a
//!   triplet loss while pushing other images away;
//! - **relative patch location**: classify where a neighbor patch sits in
//!   the 8-connected neighborhood of a center patch;
//! - **jigsaw**: classify which permutation shuffled a 3x3 patch grid.
//!
//! All batch builders are pure functions of (input, config, seed): the same
//! arguments always reproduce the same batch bit-exactly.

mod batches;
mod losses;
mod perms;

pub use batches::{
    make_exemplar_batch, make_jigsaw_batch, make_relpatch_batch, make_rotation_batch,
    ExemplarAugConfig, PatchTaskConfig,
};
pub use losses::{classification_loss, exemplar_triplet_loss, rotation_loss};
pub use perms::{select_permutation_subset, PermutationSet};

use crate::dataio::ImageBatch;
use ndarray::Array3;

/// Which pretext task a batch was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rotation,
    Exemplar,
    Relpatch,
    Jigsaw,
}

/// Model inputs for a pretext batch. Whole images for rotation/exemplar;
/// patch pairs for relative location; ordered patch stacks for jigsaw.
#[derive(Debug, Clone)]
pub enum PretextInputs {
    Images(ImageBatch),
    /// Per example: (center patch, neighbor patch).
    PatchPairs {
        center: Vec<Array3<f32>>,
        neighbor: Vec<Array3<f32>>,
    },
    /// Per example: patches in permuted order.
    PatchStacks(Vec<Vec<Array3<f32>>>),
}

/// A constructed self-supervision batch: inputs plus machine-generated
/// targets. `groups[i]` is the source-image index of example `i`; the
/// triplet loss uses it to find positives, other tasks ignore it.
#[derive(Debug, Clone)]
pub struct PretextBatch {
    pub inputs: PretextInputs,
    pub labels: Vec<usize>,
    pub task: Task,
    pub groups: Vec<usize>,
}

impl PretextBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
