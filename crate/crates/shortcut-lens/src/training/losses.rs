//! Loss construction on the shared per-step graph.
//!
//! One forward pass serves both objectives: the extractor/head loss is the
//! mean pretext loss over all rows (lensed rows first, then raw rows when
//! the raw batch is fed too), and the lens objective reuses the same
//! forward via the mean over the lensed rows only. Backward passes then
//! route gradients by parameter store.

use ndarray::{s, Array2, Array3, Array4, ArrayD, ArrayView2, Axis};

use crate::dataio::ImageBatch;
use crate::error::{Error, Result};
use crate::models::{FeatureExtractor, LensModel, StatUpdate, TaskHead};
use crate::nn::{Graph, NodeId, StoreNodes};
use crate::pretext::{PretextBatch, PretextInputs, Task};

use super::{AdversarialMode, STORE_EXTRACTOR, STORE_HEAD, STORE_LENS};

/// Everything later stages need from the shared forward pass.
pub(crate) struct ForwardOut {
    /// Input leaves, one per network input tensor (1 for whole images,
    /// 2 for patch pairs, grid^2 for jigsaw stacks), NCHW.
    pub leaves: Vec<NodeId>,
    /// Logits `[rows, K]` (or embeddings for the exemplar task).
    pub logits: NodeId,
    /// Rows the head saw: lensed + optional raw duplicate.
    pub rows: usize,
    /// Leading rows that came through the lens (0 when no lens ran).
    pub lensed_rows: usize,
    /// Per-row cross-entropy `[rows]`; absent for the exemplar task.
    pub per_row_loss: Option<NodeId>,
    /// Scalar pretext loss over all rows: the extractor/head objective.
    pub loss_all: NodeId,
    /// Scalar pretext loss over the lensed rows only (equals `loss_all`
    /// when no raw rows were appended).
    pub loss_lensed: NodeId,
    /// Mean squared lens residual over every input tensor; present iff a
    /// lens ran.
    pub recon: Option<NodeId>,
    /// Labels for all rows (duplicated when raw rows were appended).
    pub labels_all: Vec<usize>,
    /// Batch-norm statistics observed by the extractor this pass.
    pub updates_f: Vec<StatUpdate<f32>>,
    /// Batch-norm statistics observed by the lens this pass.
    pub updates_lens: Vec<StatUpdate<f32>>,
}

fn stack_hwc(parts: &[Array3<f32>]) -> Result<Array4<f32>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("empty patch list".into()))?
        .dim();
    let views: Vec<_> = parts.iter().map(|p| p.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::Shape(format!("patch stack {first:?}: {e}")))
}

fn nchw_dyn(nhwc: &Array4<f32>) -> ArrayD<f32> {
    nhwc.view()
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .into_owned()
        .into_dyn()
}

/// Raw input tensors of a pretext batch in engine (NCHW) layout.
pub(crate) fn batch_tensors(batch: &PretextBatch) -> Result<Vec<ArrayD<f32>>> {
    Ok(match &batch.inputs {
        PretextInputs::Images(b) => vec![b.to_nchw().into_dyn()],
        PretextInputs::PatchPairs { center, neighbor } => {
            vec![nchw_dyn(&stack_hwc(center)?), nchw_dyn(&stack_hwc(neighbor)?)]
        }
        PretextInputs::PatchStacks(stacks) => {
            let cells = stacks
                .first()
                .ok_or_else(|| Error::Shape("empty jigsaw batch".into()))?
                .len();
            let mut leaves = Vec::with_capacity(cells);
            for j in 0..cells {
                let slot: Vec<Array3<f32>> = stacks.iter().map(|s| s[j].clone()).collect();
                leaves.push(nchw_dyn(&stack_hwc(&slot)?));
            }
            leaves
        }
    })
}

/// Rebuild a batch's inputs from (possibly perturbed) NCHW tensors, one
/// per leaf, preserving labels/groups/task.
pub(crate) fn batch_with_tensors(
    batch: &PretextBatch,
    tensors: &[ArrayD<f32>],
) -> Result<PretextBatch> {
    fn unstack(t: &ArrayD<f32>) -> Result<Vec<Array3<f32>>> {
        let a: Array4<f32> = t
            .view()
            .into_dimensionality()
            .map_err(|e| Error::Shape(format!("expected NCHW tensor: {e}")))?
            .to_owned();
        let nhwc = a.view().permuted_axes([0, 2, 3, 1]);
        Ok((0..nhwc.shape()[0])
            .map(|i| nhwc.slice(s![i, .., .., ..]).as_standard_layout().into_owned())
            .collect())
    }
    let inputs = match &batch.inputs {
        PretextInputs::Images(_) => {
            let a: Array4<f32> = tensors[0]
                .view()
                .into_dimensionality()
                .map_err(|e| Error::Shape(format!("expected NCHW tensor: {e}")))?
                .to_owned();
            PretextInputs::Images(ImageBatch::from_nchw(&a))
        }
        PretextInputs::PatchPairs { .. } => PretextInputs::PatchPairs {
            center: unstack(&tensors[0])?,
            neighbor: unstack(&tensors[1])?,
        },
        PretextInputs::PatchStacks(stacks) => {
            let per_leaf: Vec<Vec<Array3<f32>>> =
                tensors.iter().map(unstack).collect::<Result<_>>()?;
            let n = stacks.len();
            let cells = per_leaf.len();
            let rebuilt: Vec<Vec<Array3<f32>>> = (0..n)
                .map(|i| (0..cells).map(|j| per_leaf[j][i].clone()).collect())
                .collect();
            PretextInputs::PatchStacks(rebuilt)
        }
    };
    Ok(PretextBatch {
        inputs,
        labels: batch.labels.clone(),
        task: batch.task,
        groups: batch.groups.clone(),
    })
}

pub(crate) struct ForwardCfg<'a> {
    pub extractor: &'a FeatureExtractor<f32>,
    pub head: &'a TaskHead<f32>,
    /// When present, inputs pass through the lens before the extractor.
    pub lens: Option<&'a LensModel<f32>>,
    /// Append the raw batch after the lensed one for the extractor loss
    /// (ignored without a lens, and always off for the exemplar task).
    pub feed_raw: bool,
    pub margin: f64,
    pub train: bool,
    /// Register input leaves as gradient targets (input-gradient probes).
    pub input_grad: bool,
}

pub(crate) fn build_task_forward(
    g: &mut Graph<f32>,
    cfg: &ForwardCfg,
    batch: &PretextBatch,
) -> Result<ForwardOut> {
    if batch.task != cfg.head.task {
        return Err(Error::Unsupported(format!(
            "batch built for task {:?} but head trained for {:?}",
            batch.task, cfg.head.task
        )));
    }
    if batch.is_empty() {
        return Err(Error::Shape("empty pretext batch".into()));
    }
    let tensors = batch_tensors(batch)?;
    let n = batch.len();
    let concat_raw = cfg.lens.is_some() && cfg.feed_raw && batch.task != Task::Exemplar;

    let mut nodes_f = StoreNodes::new(STORE_EXTRACTOR, &cfg.extractor.params);
    let mut nodes_h = StoreNodes::new(STORE_HEAD, &cfg.head.params);
    let mut updates_f = Vec::new();
    let mut updates_lens = Vec::new();

    let mut leaves = Vec::with_capacity(tensors.len());
    let mut residuals = Vec::with_capacity(tensors.len());
    let mut feats = Vec::with_capacity(tensors.len());
    let mut nodes_l = cfg
        .lens
        .map(|l| StoreNodes::new(STORE_LENS, &l.params));
    for t in tensors {
        let leaf = g.input(t, cfg.input_grad);
        leaves.push(leaf);
        let f_in = match cfg.lens {
            Some(lens) => {
                let (out, residual) = lens.forward(
                    g,
                    nodes_l.as_mut().unwrap(),
                    leaf,
                    cfg.train,
                    &mut updates_lens,
                )?;
                residuals.push(residual);
                if concat_raw {
                    g.concat(&[out, leaf], 0)
                } else {
                    out
                }
            }
            None => leaf,
        };
        feats.push(cfg.extractor.forward_features(g, &mut nodes_f, f_in, cfg.train, &mut updates_f));
    }
    let features = if feats.len() == 1 {
        feats[0]
    } else {
        g.concat(&feats, 1)
    };
    let feat_dim = g.shape(features)[1];
    if feat_dim != cfg.head.in_dim {
        return Err(Error::Shape(format!(
            "extractor produced {feat_dim}-dim features but head expects {}",
            cfg.head.in_dim
        )));
    }

    let logits = cfg.head.forward(g, &mut nodes_h, features, &mut updates_f);
    let rows = if concat_raw { 2 * n } else { n };
    let lensed_rows = if cfg.lens.is_some() { n } else { 0 };

    let mut labels_all = batch.labels.clone();
    if concat_raw {
        labels_all.extend_from_slice(&batch.labels);
    }

    let (per_row_loss, loss_all, loss_lensed) = if batch.task == Task::Exemplar {
        // No raw rows are ever appended for exemplar, so the batch loss and
        // the lensed-rows loss are the same node.
        let loss = g.triplet_loss(logits, &batch.groups, cfg.margin);
        (None, loss, loss)
    } else {
        let per_row = g.softmax_ce(logits, &labels_all);
        let loss_all = g.mean(per_row);
        let loss_lensed = if concat_raw {
            g.mean_range(per_row, 0, lensed_rows)
        } else {
            loss_all
        };
        (Some(per_row), loss_all, loss_lensed)
    };

    let recon = if residuals.is_empty() {
        None
    } else {
        let per_leaf: Vec<NodeId> = residuals
            .iter()
            .map(|&r| {
                let sq = g.square(r);
                g.mean(sq)
            })
            .collect();
        let mut acc = per_leaf[0];
        for &m in &per_leaf[1..] {
            acc = g.add(acc, m);
        }
        // Leaves all share one tensor shape, so the mean of per-leaf means
        // is the mean over every pixel of every input tensor.
        Some(if per_leaf.len() > 1 {
            g.scale(acc, 1.0 / per_leaf.len() as f32)
        } else {
            acc
        })
    };

    Ok(ForwardOut {
        leaves,
        logits,
        rows,
        lensed_rows,
        per_row_loss,
        loss_all,
        loss_lensed,
        recon,
        labels_all,
        updates_f,
        updates_lens,
    })
}

/// Per-row least-probable class under the softmax of `logits`, ties
/// resolved to the lowest index. The softmax is monotone, so the smallest
/// probability sits at the smallest logit; equal logits give equal
/// probabilities, preserving the tie-break.
pub fn least_likely_targets(logits: ArrayView2<f32>) -> Vec<usize> {
    logits
        .outer_iter()
        .map(|row| {
            let mut best = 0usize;
            for j in 1..row.len() {
                if row[j] < row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Attach the lens's adversarial objective to an existing forward pass.
/// Returns `None` for [`AdversarialMode::None`].
pub(crate) fn build_adversarial(
    g: &mut Graph<f32>,
    fwd: &ForwardOut,
    mode: AdversarialMode,
    task: Task,
) -> Result<Option<NodeId>> {
    match mode {
        AdversarialMode::None => Ok(None),
        AdversarialMode::Full => Ok(Some(g.scale(fwd.loss_lensed, -1.0))),
        AdversarialMode::LeastLikely => {
            if task == Task::Exemplar {
                return Err(Error::Unsupported(
                    "least_likely adversarial mode needs class logits; exemplar \
                     produces embeddings"
                        .to_string(),
                ));
            }
            if fwd.lensed_rows == 0 {
                return Err(Error::Shape(
                    "least_likely objective requires lensed rows".into(),
                ));
            }
            let values: Array2<f32> = g
                .value(fwd.logits)
                .view()
                .into_dimensionality()
                .expect("logits are 2-D")
                .to_owned();
            // The targets are recomputed from the current predictions every
            // step and treated as constants: no gradient flows through the
            // argmin itself.
            let targets = least_likely_targets(values.slice(s![..fwd.lensed_rows, ..]));
            let lensed_logits = if fwd.rows == fwd.lensed_rows {
                fwd.logits
            } else {
                g.slice_rows(fwd.logits, 0, fwd.lensed_rows)
            };
            let ce = g.softmax_ce(lensed_logits, &targets);
            Ok(Some(g.mean(ce)))
        }
    }
}

/// Pretext loss of a batch under the current extractor/head, in inference
/// mode and without any lens. Gradient-free convenience for evaluation and
/// tests.
pub fn ssl_loss(
    extractor: &FeatureExtractor<f32>,
    head: &TaskHead<f32>,
    batch: &PretextBatch,
    margin: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let fwd = build_task_forward(
        &mut g,
        &ForwardCfg {
            extractor,
            head,
            lens: None,
            feed_raw: false,
            margin,
            train: false,
            input_grad: false,
        },
        batch,
    )?;
    Ok(g.scalar(fwd.loss_all) as f64)
}

/// One shared lensed forward evaluated under both objectives: returns
/// `(adversarial loss, pretext loss on the lensed rows)`. In full mode the
/// first is exactly the negation of the second.
pub fn adversarial_pair(
    extractor: &FeatureExtractor<f32>,
    head: &TaskHead<f32>,
    lens: &LensModel<f32>,
    batch: &PretextBatch,
    mode: AdversarialMode,
    margin: f64,
) -> Result<(f64, f64)> {
    if mode == AdversarialMode::None {
        return Err(Error::Unsupported(
            "adversarial_pair needs an adversarial mode; \"none\" trains no lens".to_string(),
        ));
    }
    let mut g = Graph::new();
    let fwd = build_task_forward(
        &mut g,
        &ForwardCfg {
            extractor,
            head,
            lens: Some(lens),
            feed_raw: false,
            margin,
            train: false,
            input_grad: false,
        },
        batch,
    )?;
    let adv = build_adversarial(&mut g, &fwd, mode, batch.task)?.expect("mode is not none");
    Ok((g.scalar(adv) as f64, g.scalar(fwd.loss_lensed) as f64))
}

/// Mean squared pixel difference between two equally-shaped batches.
/// Symmetric, zero iff equal, and invariant to batch size for replicated
/// content (it is a mean, not a sum).
pub fn reconstruction_loss(x: &ImageBatch, lx: &ImageBatch) -> Result<f64> {
    if x.data.shape() != lx.data.shape() {
        return Err(Error::Shape(format!(
            "reconstruction_loss: {:?} vs {:?}",
            x.data.shape(),
            lx.data.shape()
        )));
    }
    if x.data.is_empty() {
        return Err(Error::Shape("reconstruction_loss: empty batch".into()));
    }
    let sum: f64 = x
        .data
        .iter()
        .zip(lx.data.iter())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / x.data.len() as f64)
}

/// Fraction of correctly classified rows (first maximal logit wins ties).
pub fn classification_accuracy(logits: ArrayView2<f32>, labels: &[usize]) -> f64 {
    assert_eq!(logits.nrows(), labels.len(), "accuracy: label count");
    if labels.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for (row, &label) in logits.outer_iter().zip(labels) {
        let mut best = 0usize;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}

/// Fraction of anchors whose triplet margin is already satisfied
/// (hardest positive no further than the nearest negative minus the
/// margin), mirroring the selection inside the triplet loss. Anchors
/// lacking a positive or negative are excluded; returns 1.0 when no
/// anchor qualifies.
pub fn triplet_satisfaction(emb: &Array2<f32>, groups: &[usize], margin: f64) -> f64 {
    let n = emb.nrows();
    assert_eq!(groups.len(), n, "triplet_satisfaction: group count");
    let eps = 1e-12f64;
    let mut normed = Array2::<f64>::zeros(emb.raw_dim());
    for i in 0..n {
        let row = emb.row(i);
        let norm = (row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() + eps).sqrt();
        for j in 0..row.len() {
            normed[(i, j)] = emb[(i, j)] as f64 / norm;
        }
    }
    let dist = |a: usize, b: usize| -> f64 {
        let mut s = 0.0;
        for j in 0..normed.ncols() {
            let d = normed[(a, j)] - normed[(b, j)];
            s += d * d;
        }
        (s + eps).sqrt()
    };
    let mut valid = 0usize;
    let mut satisfied = 0usize;
    for a in 0..n {
        let mut dp: Option<f64> = None;
        let mut dn: Option<f64> = None;
        for o in 0..n {
            if o == a {
                continue;
            }
            let d = dist(a, o);
            if groups[o] == groups[a] {
                if dp.is_none_or(|cur| d > cur) {
                    dp = Some(d);
                }
            } else if dn.is_none_or(|cur| d < cur) {
                dn = Some(d);
            }
        }
        if let (Some(dp), Some(dn)) = (dp, dn) {
            valid += 1;
            if dp - dn + margin <= 0.0 {
                satisfied += 1;
            }
        }
    }
    if valid == 0 {
        1.0
    } else {
        satisfied as f64 / valid as f64
    }
}
