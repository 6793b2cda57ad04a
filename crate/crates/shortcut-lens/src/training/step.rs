//! One synchronous training step and the serializable training state.

use std::path::Path;

use ndarray::{Array2, Ix2};

use crate::error::{Error, Result};
use crate::models::{
    apply_stat_updates, build_feature_extractor, build_lens, build_task_head, load_checkpoint,
    save_checkpoint, store_arrays, Checkpoint, FeatureExtractor, LensModel, TaskHead,
};
use crate::nn::{Adam, Graph, Targets};
use crate::pretext::{PretextBatch, Task};
use crate::util::derive_seed;

use super::fgsm::fgsm_perturb;
use super::losses::{
    build_adversarial, build_task_forward, classification_accuracy, triplet_satisfaction,
    ForwardCfg, ForwardOut,
};
use super::{AdversarialMode, TrainConfig, BN_MOMENTUM, STORE_EXTRACTOR, STORE_HEAD, STORE_LENS};

/// How many input tensors the network sees per pretext example; the head's
/// input is the concatenation of their representations.
pub(crate) fn head_input_leaves(cfg: &TrainConfig) -> usize {
    match cfg.task {
        Task::Rotation | Task::Exemplar => 1,
        Task::Relpatch => 2,
        Task::Jigsaw => cfg.jigsaw_grid * cfg.jigsaw_grid,
    }
}

pub(crate) fn head_class_count(cfg: &TrainConfig) -> usize {
    match cfg.task {
        Task::Rotation => 4,
        Task::Relpatch => 8,
        Task::Jigsaw => cfg.jigsaw_permutations,
        // The exemplar head projects to a fixed embedding width and
        // ignores this argument.
        Task::Exemplar => 0,
    }
}

/// Everything one training run mutates: the three networks, their
/// optimizer moments, and the global step counter. Batch construction
/// derives all randomness from `(config seed, step)`, so this struct plus
/// the config is the complete resume state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub extractor: FeatureExtractor<f32>,
    pub head: TaskHead<f32>,
    pub lens: LensModel<f32>,
    pub adam_f: Adam<f32>,
    pub adam_h: Adam<f32>,
    pub adam_l: Adam<f32>,
}

impl TrainState {
    /// Fresh state at step 0 with deterministic per-network
    /// initialization seeds derived from the config seed.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let extractor = build_feature_extractor(
            &cfg.extractor,
            derive_seed(cfg.seed, &["init", "extractor"]),
        )?;
        let lens = build_lens(&cfg.lens, derive_seed(cfg.seed, &["init", "lens"]))?;
        let in_dim = cfg.extractor.prelogits_dim() * head_input_leaves(cfg);
        let head = build_task_head(
            cfg.task,
            in_dim,
            head_class_count(cfg),
            derive_seed(cfg.seed, &["init", "head"]),
        )?;
        let adam_f = Adam::new(cfg.adam, &extractor.params);
        let adam_h = Adam::new(cfg.adam, &head.params);
        let adam_l = Adam::new(cfg.adam, &lens.params);
        Ok(TrainState {
            step: 0,
            extractor,
            head,
            lens,
            adam_f,
            adam_h,
            adam_l,
        })
    }
}

/// Per-step metrics, all measured on the pre-update parameters.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    /// Index of the step that was just taken (0-based).
    pub step: u64,
    pub lr: f64,
    /// Pretext loss the extractor/head descended (mean over all rows).
    pub loss_ssl: f64,
    /// Adversarial term of the lens objective; absent when no lens trains.
    pub loss_adv: Option<f64>,
    /// Mean squared lens residual; absent when no lens trains.
    pub loss_rec: Option<f64>,
    /// Pretext accuracy over all rows (triplet-margin satisfaction rate
    /// for the exemplar task).
    pub task_accuracy: f64,
}

fn first_non_finite_row(g: &Graph<f32>, fwd: &ForwardOut) -> usize {
    if let Some(pr) = fwd.per_row_loss {
        for (i, &v) in g.value(pr).iter().enumerate() {
            if !v.is_finite() {
                return i;
            }
        }
    }
    0
}

/// Advance the state by one step on `batch`:
/// 1. one shared forward through lens (when trained), extractor, head;
/// 2. extractor/head gradients of the pretext loss over all rows;
/// 3. lens gradients of `adversarial + lambda * reconstruction` with the
///    extractor and head held constant;
/// 4. both Adam updates applied after both backward passes, so each sees
///    the same pre-step parameters;
/// 5. batch-norm running statistics folded in (when batch norm is used).
///
/// With `adversarial.mode = "none"` the lens is skipped entirely and the
/// extractor trains on the batch as given; if an input-perturbation config
/// is present, the batch is perturbed against the current pretext loss
/// first.
pub fn train_step(
    state: &mut TrainState,
    batch: &PretextBatch,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepOutcome> {
    let use_lens = cfg.adversarial.mode != AdversarialMode::None;
    let perturbed;
    let batch = match &cfg.fgsm {
        Some(f) if !use_lens && f.epsilon > 0.0 => {
            let seed = derive_seed(cfg.seed, &["fgsm-step", &state.step.to_string()]);
            perturbed = fgsm_perturb(
                &state.extractor,
                &state.head,
                batch,
                cfg.exemplar_margin,
                f,
                seed,
            )?;
            &perturbed
        }
        _ => batch,
    };

    let mut g = Graph::new();
    let fwd = build_task_forward(
        &mut g,
        &ForwardCfg {
            extractor: &state.extractor,
            head: &state.head,
            lens: use_lens.then_some(&state.lens),
            feed_raw: cfg.adversarial.feed_raw,
            margin: cfg.exemplar_margin,
            train: true,
            input_grad: false,
        },
        batch,
    )?;

    let loss_ssl = g.scalar(fwd.loss_all) as f64;
    if !loss_ssl.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            loss: loss_ssl,
            example: first_non_finite_row(&g, &fwd),
        });
    }

    let (lens_obj, loss_adv, loss_rec) = if use_lens {
        let adv = build_adversarial(&mut g, &fwd, cfg.adversarial.mode, batch.task)?
            .expect("adversarial mode is not none");
        let rec = fwd.recon.expect("lens forward produced residuals");
        let scaled = g.scale(rec, cfg.adversarial.lambda as f32);
        let obj = g.add(adv, scaled);
        let obj_v = g.scalar(obj) as f64;
        if !obj_v.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: state.step,
                loss: obj_v,
                example: first_non_finite_row(&g, &fwd),
            });
        }
        (
            Some(obj),
            Some(g.scalar(adv) as f64),
            Some(g.scalar(rec) as f64),
        )
    } else {
        (None, None, None)
    };

    let logits: Array2<f32> = g
        .value(fwd.logits)
        .view()
        .into_dimensionality::<Ix2>()
        .expect("head output is 2-D")
        .to_owned();
    let task_accuracy = if batch.task == Task::Exemplar {
        triplet_satisfaction(&logits, &batch.groups, cfg.exemplar_margin)
    } else {
        classification_accuracy(logits.view(), &fwd.labels_all)
    };

    // Both gradient computations read the same pre-step parameter values;
    // no store is mutated until every backward pass has finished.
    let grads_fh = g.backward(fwd.loss_all, &Targets::stores(&[STORE_EXTRACTOR, STORE_HEAD]));
    let grads_l = lens_obj.map(|obj| g.backward(obj, &Targets::stores(&[STORE_LENS])));

    apply_stat_updates(&mut state.extractor.params, &fwd.updates_f, BN_MOMENTUM);
    apply_stat_updates(&mut state.lens.params, &fwd.updates_lens, BN_MOMENTUM);

    state
        .adam_f
        .step(&g, &grads_fh, STORE_EXTRACTOR, &mut state.extractor.params, lr);
    state
        .adam_h
        .step(&g, &grads_fh, STORE_HEAD, &mut state.head.params, lr);
    if let Some(gl) = &grads_l {
        state
            .adam_l
            .step(&g, gl, STORE_LENS, &mut state.lens.params, lr);
    }

    let outcome = StepOutcome {
        step: state.step,
        lr,
        loss_ssl,
        loss_adv,
        loss_rec,
        task_accuracy,
    };
    state.step += 1;
    Ok(outcome)
}

/// Write the complete resume state (parameters, optimizer moments, step
/// counter, config snapshot) as one checkpoint directory.
pub fn save_train_state(state: &TrainState, cfg: &TrainConfig, dir: &Path) -> Result<()> {
    let mut arrays = Vec::new();
    arrays.extend(store_arrays("extractor", &state.extractor.params));
    arrays.extend(store_arrays("head", &state.head.params));
    arrays.extend(store_arrays("lens", &state.lens.params));
    arrays.extend(state.adam_f.export_state("adam_f"));
    arrays.extend(state.adam_h.export_state("adam_h"));
    arrays.extend(state.adam_l.export_state("adam_l"));
    let meta = serde_json::json!({
        "kind": "train_state",
        "step": state.step,
        "adam_t": {
            "extractor": state.adam_f.t,
            "head": state.adam_h.t,
            "lens": state.adam_l.t,
        },
        "config": serde_json::to_value(cfg)?,
    });
    save_checkpoint(dir, &meta, &arrays)
}

fn meta_u64(ck: &Checkpoint, pointer: &str) -> Result<u64> {
    ck.meta
        .pointer(pointer)
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Checkpoint(format!("missing or non-integer field {pointer}")))
}

/// Rebuild a [`TrainState`] from a checkpoint written by
/// [`save_train_state`]. The stored config snapshot must match `cfg`
/// exactly: resuming under different settings would silently change the
/// run's meaning.
pub fn load_train_state(dir: &Path, cfg: &TrainConfig) -> Result<TrainState> {
    let ck = load_checkpoint(dir)?;
    let want = serde_json::to_value(cfg)?;
    match ck.meta.get("config") {
        Some(saved) if *saved == want => {}
        Some(_) => {
            return Err(Error::Checkpoint(format!(
                "checkpoint at {} was written under a different training config",
                dir.display()
            )))
        }
        None => {
            return Err(Error::Checkpoint(format!(
                "checkpoint at {} has no training config snapshot",
                dir.display()
            )))
        }
    }
    let mut state = TrainState::new(cfg)?;
    ck.restore_store("extractor", &mut state.extractor.params)?;
    ck.restore_store("head", &mut state.head.params)?;
    ck.restore_store("lens", &mut state.lens.params)?;
    state.adam_f.import_state(
        "adam_f",
        &ck.arrays_with_prefix("adam_f"),
        meta_u64(&ck, "/adam_t/extractor")?,
    );
    state.adam_h.import_state(
        "adam_h",
        &ck.arrays_with_prefix("adam_h"),
        meta_u64(&ck, "/adam_t/head")?,
    );
    state.adam_l.import_state(
        "adam_l",
        &ck.arrays_with_prefix("adam_l"),
        meta_u64(&ck, "/adam_t/lens")?,
    );
    state.step = meta_u64(&ck, "/step")?;
    Ok(state)
}
