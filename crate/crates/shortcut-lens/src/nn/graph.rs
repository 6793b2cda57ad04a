//! Eager computation tape with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order (so ids are already topologically
//! sorted) and hold their forward value plus whatever small caches the
//! backward step needs. [`Graph::backward`] takes a [`Targets`] set and only
//! propagates gradients through nodes whose ancestry contains a target; this
//! prunes, for example, the whole lens subgraph when differentiating the
//! pretext loss for the extractor, and the raw-image branch when
//! differentiating the lens loss.

use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};

use super::kernels::{self, NormStats};
use super::params::ParamStore;
use super::El;

pub type NodeId = usize;

/// Cached state for the fused semi-hard triplet op.
pub struct TripletCache<F> {
    normed: Array2<F>,
    norms: Array1<F>,
    dist: Array2<F>,
    /// per anchor: (positive, negative, term_active)
    picks: Vec<Option<(usize, usize, bool)>>,
    anchors: usize,
}

enum Op<F> {
    Leaf {
        grad: bool,
    },
    Param {
        store: usize,
        slot: usize,
        trainable: bool,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    GroupNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        stats: NormStats<F>,
    },
    BatchNormTrain {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: NormStats<F>,
    },
    BatchNormEval {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Array1<F>,
        rstd: Array1<F>,
    },
    Relu {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: F,
    },
    Square {
        x: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    SliceRows {
        x: NodeId,
        start: usize,
        end: usize,
    },
    MaxPool {
        x: NodeId,
        arg: Vec<u32>,
        in_hw: (usize, usize),
    },
    Upsample2x {
        x: NodeId,
        in_hw: (usize, usize),
    },
    Gap {
        x: NodeId,
        in_hw: (usize, usize),
    },
    Reshape {
        x: NodeId,
    },
    SoftmaxCe {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Array2<F>,
    },
    Triplet {
        emb: NodeId,
        cache: TripletCache<F>,
    },
    Mean {
        x: NodeId,
    },
    MeanRange {
        x: NodeId,
        start: usize,
        end: usize,
    },
}

struct Node<F: El> {
    value: ArrayD<F>,
    op: Op<F>,
}

pub struct Graph<F: El> {
    nodes: Vec<Node<F>>,
}

/// What a backward pass should produce gradients for: any trainable
/// parameter belonging to one of `stores`, plus the listed leaf inputs.
#[derive(Default, Clone)]
pub struct Targets {
    pub stores: Vec<usize>,
    pub leaves: Vec<NodeId>,
}

impl Targets {
    pub fn stores(ids: &[usize]) -> Self {
        Targets {
            stores: ids.to_vec(),
            leaves: Vec::new(),
        }
    }
    pub fn leaf(id: NodeId) -> Self {
        Targets {
            stores: Vec::new(),
            leaves: vec![id],
        }
    }
}

/// Gradients by node id (only target nodes are retained).
pub struct Grads<F> {
    by_node: Vec<Option<ArrayD<F>>>,
}

impl<F: El> Grads<F> {
    pub fn get(&self, id: NodeId) -> Option<&ArrayD<F>> {
        self.by_node.get(id).and_then(|o| o.as_ref())
    }
}

/// Registers parameter nodes for one store on demand, at most once per
/// graph, so repeated applications of the same network share nodes and
/// gradients accumulate in one place.
pub struct StoreNodes {
    pub store_id: usize,
    ids: Vec<Option<NodeId>>,
}

impl StoreNodes {
    pub fn new<F: El>(store_id: usize, store: &ParamStore<F>) -> Self {
        StoreNodes {
            store_id,
            ids: vec![None; store.len()],
        }
    }

    pub fn node<F: El>(
        &mut self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        slot: usize,
    ) -> NodeId {
        if let Some(id) = self.ids[slot] {
            return id;
        }
        let id = g.param(self.store_id, slot, store);
        self.ids[slot] = Some(id);
        id
    }
}

impl<F: El> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: El> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: ArrayD<F>, op: Op<F>) -> NodeId {
        debug_assert!(value.is_standard_layout());
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<F> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    pub fn scalar(&self, id: NodeId) -> F {
        assert_eq!(self.nodes[id].value.len(), 1, "scalar() on non-scalar node");
        *self.nodes[id].value.iter().next().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// All parameter nodes registered in this graph as (node, store, slot).
    pub fn param_nodes(&self) -> Vec<(NodeId, usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(id, n)| match n.op {
                Op::Param { store, slot, .. } => Some((id, store, slot)),
                _ => None,
            })
            .collect()
    }

    // ---- leaf builders ----

    /// External input. `grad` enables input gradients (adversarial example
    /// generation needs d loss / d pixels).
    pub fn input(&mut self, value: ArrayD<F>, grad: bool) -> NodeId {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        self.push(value, Op::Leaf { grad })
    }

    pub fn param(&mut self, store_id: usize, slot: usize, store: &ParamStore<F>) -> NodeId {
        let value = store.value(slot).clone();
        let trainable = store.is_trainable(slot);
        self.push(
            value,
            Op::Param {
                store: store_id,
                slot,
                trainable,
            },
        )
    }

    // ---- op builders ----

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let xv = self.nodes[x].value.view().into_dimensionality().unwrap();
        let wv = self.nodes[w].value.view().into_dimensionality().unwrap();
        let bv = b.map(|bb| {
            self.nodes[bb]
                .value
                .view()
                .into_dimensionality()
                .unwrap()
        });
        let out = kernels::conv2d(&xv, &wv, bv.as_ref(), stride, pad);
        self.push(out.into_dyn(), Op::Conv2d { x, w, b, stride, pad })
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xv: Array2<F> = self.nodes[x]
            .value
            .view()
            .into_dimensionality()
            .unwrap()
            .to_owned();
        let wv: Array2<F> = self.nodes[w]
            .value
            .view()
            .into_dimensionality()
            .unwrap()
            .to_owned();
        let (n, _di) = xv.dim();
        let (_di2, dout) = wv.dim();
        let mut out = Array2::<F>::zeros((n, dout));
        kernels::gemm(F::one(), &xv.view(), &wv.view(), F::zero(), &mut out);
        if let Some(bb) = b {
            let bv = &self.nodes[bb].value;
            for mut row in out.rows_mut() {
                for (o, &bi) in row.iter_mut().zip(bv.iter()) {
                    *o = *o + bi;
                }
            }
        }
        self.push(out.into_dyn(), Op::Dense { x, w, b })
    }

    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        eps: f64,
    ) -> NodeId {
        let xv = self.nodes[x].value.view().into_dimensionality().unwrap();
        let gv = self.nodes[gamma].value.view().into_dimensionality().unwrap();
        let bv = self.nodes[beta].value.view().into_dimensionality().unwrap();
        let (out, stats) = kernels::group_norm(&xv, &gv, &bv, groups, eps);
        self.push(
            out.into_dyn(),
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
        )
    }

    /// Batch norm in training mode. Returns (node, batch_mean, batch_var)
    /// so the caller can maintain running averages outside the graph.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> (NodeId, Array1<F>, Array1<F>) {
        let xv = self.nodes[x].value.view().into_dimensionality().unwrap();
        let gv = self.nodes[gamma].value.view().into_dimensionality().unwrap();
        let bv = self.nodes[beta].value.view().into_dimensionality().unwrap();
        let (out, stats, var) = kernels::batch_norm_train(&xv, &gv, &bv, eps);
        let mean = stats.mean.row(0).to_owned();
        let id = self.push(
            out.into_dyn(),
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                stats,
            },
        );
        (id, mean, var)
    }

    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Array1<F>,
        running_var: &Array1<F>,
        eps: f64,
    ) -> NodeId {
        let rstd: Array1<F> =
            running_var.mapv(|v| F::one() / (v + F::from_f64(eps)).sqrt());
        let xv = &self.nodes[x].value;
        let c = xv.shape()[1];
        assert_eq!(running_mean.len(), c);
        let gamma_v = self.nodes[gamma].value.clone();
        let beta_v = self.nodes[beta].value.clone();
        let mut out = xv.clone();
        let (n, _, h, w) = {
            let s = out.shape();
            (s[0], s[1], s[2], s[3])
        };
        let plane = h * w;
        {
            let os = out.as_slice_mut().unwrap();
            for ni in 0..n {
                for ch in 0..c {
                    let off = (ni * c + ch) * plane;
                    let mu = running_mean[ch];
                    let rs = rstd[ch];
                    let ga = gamma_v[ch];
                    let be = beta_v[ch];
                    for q in 0..plane {
                        os[off + q] = (os[off + q] - mu) * rs * ga + be;
                    }
                }
            }
        }
        self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: running_mean.clone(),
                rstd,
            },
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x].value.mapv(|v| if v > F::zero() { v } else { F::zero() });
        self.push(out, Op::Relu { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let out = &self.nodes[a].value + &self.nodes[b].value;
        self.push(out, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let out = &self.nodes[a].value - &self.nodes[b].value;
        self.push(out, Op::Sub { a, b })
    }

    pub fn scale(&mut self, x: NodeId, c: F) -> NodeId {
        let out = self.nodes[x].value.mapv(|v| v * c);
        self.push(out, Op::Scale { x, c })
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x].value.mapv(|v| v * v);
        self.push(out, Op::Square { x })
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views)
            .expect("concat: incompatible shapes")
            .as_standard_layout()
            .into_owned();
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// Slice rows [start, end) along axis 0.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let v = &self.nodes[x].value;
        assert!(start < end && end <= v.shape()[0], "slice_rows: bad range");
        let out = v
            .slice_axis(Axis(0), ndarray::Slice::from(start..end))
            .as_standard_layout()
            .into_owned();
        self.push(out, Op::SliceRows { x, start, end })
    }

    pub fn maxpool(&mut self, x: NodeId, k: usize, stride: usize, pad: usize) -> NodeId {
        let xv = self.nodes[x].value.view().into_dimensionality().unwrap();
        let (_, _, h, w) = xv.dim();
        let (out, arg) = kernels::maxpool(&xv, k, stride, pad);
        self.push(
            out.into_dyn(),
            Op::MaxPool {
                x,
                arg,
                in_hw: (h, w),
            },
        )
    }

    pub fn upsample2x(&mut self, x: NodeId) -> NodeId {
        let xv = self.nodes[x].value.view().into_dimensionality().unwrap();
        let (_, _, h, w) = xv.dim();
        let out = kernels::upsample2x(&xv);
        self.push(out.into_dyn(), Op::Upsample2x { x, in_hw: (h, w) })
    }

    /// Global average pool (N,C,H,W) -> (N,C).
    pub fn gap(&mut self, x: NodeId) -> NodeId {
        let xv = self.nodes[x].value.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let (n, c, h, w) = xv.dim();
        let mf = F::from_f64((h * w) as f64);
        let mut out = Array2::<F>::zeros((n, c));
        for ni in 0..n {
            for ch in 0..c {
                out[(ni, ch)] = xv
                    .index_axis(Axis(0), ni)
                    .index_axis(Axis(0), ch)
                    .iter()
                    .copied()
                    .sum::<F>()
                    / mf;
            }
        }
        self.push(out.into_dyn(), Op::Gap { x, in_hw: (h, w) })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let v = &self.nodes[x].value;
        assert_eq!(
            v.len(),
            shape.iter().product::<usize>(),
            "reshape: element count mismatch"
        );
        let out = v
            .to_shape(IxDyn(shape))
            .expect("reshape")
            .as_standard_layout()
            .into_owned();
        self.push(out, Op::Reshape { x })
    }

    /// Per-example softmax cross-entropy: logits (N,K) -> losses (N,).
    pub fn softmax_ce(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let lv: Array2<F> = self.nodes[logits]
            .value
            .view()
            .into_dimensionality()
            .unwrap()
            .to_owned();
        let (n, k) = lv.dim();
        assert_eq!(labels.len(), n, "softmax_ce: labels length");
        let mut probs = Array2::<F>::zeros((n, k));
        let mut losses = Array1::<F>::zeros(n);
        for i in 0..n {
            assert!(labels[i] < k, "softmax_ce: label out of range");
            let row = lv.row(i);
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for j in 0..k {
                let e = (row[j] - m).exp();
                probs[(i, j)] = e;
                sum = sum + e;
            }
            let lse = sum.ln();
            for j in 0..k {
                probs[(i, j)] = probs[(i, j)] / sum;
            }
            losses[i] = lse - (row[labels[i]] - m);
        }
        self.push(
            losses.into_dyn(),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Fused triplet loss over a batch of embeddings (N,D) with group ids.
    /// Embeddings are L2-normalized internally. Per anchor: hardest (most
    /// distant) positive and nearest negative; the selected negative is the
    /// nearest margin-violating one whenever a violator exists, and the
    /// nearest (hardest) one otherwise — both cases reduce to the global
    /// nearest negative. Ties resolve to the lowest index. Loss is the mean
    /// hinge max(0, d(a,p) - d(a,n) + margin) over anchors that have both a
    /// positive and a negative.
    pub fn triplet_loss(&mut self, emb: NodeId, groups: &[usize], margin: f64) -> NodeId {
        let ev: Array2<F> = self.nodes[emb]
            .value
            .view()
            .into_dimensionality()
            .unwrap()
            .to_owned();
        let (n, d) = ev.dim();
        assert_eq!(groups.len(), n, "triplet: group length");
        let eps = F::from_f64(1e-12);
        let mut norms = Array1::<F>::zeros(n);
        let mut normed = Array2::<F>::zeros((n, d));
        for i in 0..n {
            let ssq: F = ev.row(i).iter().map(|&v| v * v).sum();
            let nm = (ssq + eps).sqrt();
            norms[i] = nm;
            for j in 0..d {
                normed[(i, j)] = ev[(i, j)] / nm;
            }
        }
        let mut dist = Array2::<F>::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let mut ssq = F::zero();
                for kk in 0..d {
                    let df = normed[(i, kk)] - normed[(j, kk)];
                    ssq = ssq + df * df;
                }
                let dd = (ssq + eps).sqrt();
                dist[(i, j)] = dd;
                dist[(j, i)] = dd;
            }
        }
        let mf = F::from_f64(margin);
        let mut picks: Vec<Option<(usize, usize, bool)>> = vec![None; n];
        let mut total = F::zero();
        let mut anchors = 0usize;
        for a in 0..n {
            // hardest positive: max distance, first index wins ties
            let mut pos: Option<(usize, F)> = None;
            for p in 0..n {
                if p != a && groups[p] == groups[a] {
                    let dpp = dist[(a, p)];
                    if pos.map(|(_, best)| dpp > best).unwrap_or(true) {
                        pos = Some((p, dpp));
                    }
                }
            }
            let Some((p_idx, dp)) = pos else { continue };
            // nearest negative: min distance, first index wins ties
            let mut nearest: Option<(usize, F)> = None;
            for ng in 0..n {
                if groups[ng] == groups[a] {
                    continue;
                }
                let dn = dist[(a, ng)];
                if nearest.map(|(_, best)| dn < best).unwrap_or(true) {
                    nearest = Some((ng, dn));
                }
            }
            let Some((n_idx, dn)) = nearest else { continue };
            anchors += 1;
            let term = dp - dn + mf;
            if term > F::zero() {
                total = total + term;
                picks[a] = Some((p_idx, n_idx, true));
            } else {
                picks[a] = Some((p_idx, n_idx, false));
            }
        }
        assert!(anchors > 0, "triplet: no anchor has both a positive and a negative");
        let loss = total / F::from_f64(anchors as f64);
        let cache = TripletCache {
            normed,
            norms,
            dist,
            picks,
            anchors,
        };
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), loss),
            Op::Triplet { emb, cache },
        )
    }

    /// Mean over every element -> scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let m = v.iter().copied().sum::<F>() / F::from_f64(v.len() as f64);
        self.push(ArrayD::from_elem(IxDyn(&[1]), m), Op::Mean { x })
    }

    /// Mean of elements [start, end) of a 1-D vector -> scalar.
    pub fn mean_range(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let v = &self.nodes[x].value;
        assert_eq!(v.ndim(), 1, "mean_range: expects 1-D input");
        assert!(start < end && end <= v.len(), "mean_range: bad range");
        let s: F = v.iter().skip(start).take(end - start).copied().sum();
        let m = s / F::from_f64((end - start) as f64);
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), m),
            Op::MeanRange { x, start, end },
        )
    }

    // ---- backward ----

    fn is_target(&self, id: NodeId, targets: &Targets) -> bool {
        match &self.nodes[id].op {
            Op::Param {
                store, trainable, ..
            } => *trainable && targets.stores.contains(store),
            Op::Leaf { grad } => *grad && targets.leaves.contains(&id),
            _ => false,
        }
    }

    fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id].op {
            Op::Leaf { .. } | Op::Param { .. } => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                if let Some(bb) = b {
                    v.push(*bb);
                }
                v
            }
            Op::Dense { x, w, b } => {
                let mut v = vec![*x, *w];
                if let Some(bb) = b {
                    v.push(*bb);
                }
                v
            }
            Op::GroupNorm { x, gamma, beta, .. }
            | Op::BatchNormTrain { x, gamma, beta, .. }
            | Op::BatchNormEval { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Relu { x }
            | Op::Scale { x, .. }
            | Op::Square { x }
            | Op::SliceRows { x, .. }
            | Op::MaxPool { x, .. }
            | Op::Upsample2x { x, .. }
            | Op::Gap { x, .. }
            | Op::Reshape { x }
            | Op::Mean { x }
            | Op::MeanRange { x, .. } => vec![*x],
            Op::Add { a, b } | Op::Sub { a, b } => vec![*a, *b],
            Op::Concat { parts, .. } => parts.clone(),
            Op::SoftmaxCe { logits, .. } => vec![*logits],
            Op::Triplet { emb, .. } => vec![*emb],
        }
    }

    /// Reverse-mode gradients of scalar `loss` w.r.t. the target set.
    pub fn backward(&self, loss: NodeId, targets: &Targets) -> Grads<F> {
        assert_eq!(
            self.nodes[loss].value.len(),
            1,
            "backward: loss must be scalar"
        );
        // Which nodes have a target in their ancestry? Ids are topological,
        // so one forward scan suffices.
        let mut reach = vec![false; self.nodes.len()];
        for id in 0..self.nodes.len() {
            if self.is_target(id, targets) {
                reach[id] = true;
                continue;
            }
            reach[id] = self.inputs(id).iter().any(|&i| reach[i]);
        }
        let mut grads: Vec<Option<ArrayD<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !reach[loss] {
            return Grads { by_node: grads };
        }
        grads[loss] = Some(ArrayD::from_elem(IxDyn(&[1]), F::one()));
        for id in (0..=loss).rev() {
            if grads[id].is_none() || !reach[id] {
                continue;
            }
            let keep_for_output = self.is_target(id, targets);
            let g = if keep_for_output {
                grads[id].clone().unwrap()
            } else {
                grads[id].take().unwrap()
            };
            self.propagate(id, &g, &reach, &mut grads);
        }
        // retain only target gradients
        for id in 0..grads.len() {
            if !self.is_target(id, targets) {
                grads[id] = None;
            }
        }
        Grads { by_node: grads }
    }

    fn accumulate(grads: &mut [Option<ArrayD<F>>], id: NodeId, g: ArrayD<F>) {
        match &mut grads[id] {
            Some(acc) => *acc = &*acc + &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        id: NodeId,
        g: &ArrayD<F>,
        reach: &[bool],
        grads: &mut Vec<Option<ArrayD<F>>>,
    ) {
        match &self.nodes[id].op {
            Op::Leaf { .. } | Op::Param { .. } => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xv = self.nodes[*x].value.view().into_dimensionality().unwrap();
                let wv = self.nodes[*w].value.view().into_dimensionality().unwrap();
                let dout = g.view().into_dimensionality().unwrap();
                let need_dx = reach[*x];
                let need_dw = reach[*w];
                let need_db = b.map(|bb| reach[bb]).unwrap_or(false);
                if !(need_dx || need_dw || need_db) {
                    return;
                }
                let (dx, dw, db) =
                    kernels::conv2d_backward(&xv, &wv, &dout, *stride, *pad, need_dx);
                if need_dx {
                    Self::accumulate(grads, *x, dx.unwrap().into_dyn());
                }
                if need_dw {
                    Self::accumulate(grads, *w, dw.into_dyn());
                }
                if need_db {
                    Self::accumulate(grads, b.unwrap(), db.into_dyn());
                }
            }
            Op::Dense { x, w, b } => {
                let xv: Array2<F> = self.nodes[*x]
                    .value
                    .view()
                    .into_dimensionality()
                    .unwrap()
                    .to_owned();
                let wv: Array2<F> = self.nodes[*w]
                    .value
                    .view()
                    .into_dimensionality()
                    .unwrap()
                    .to_owned();
                let dy: Array2<F> = g.view().into_dimensionality().unwrap().to_owned();
                if reach[*x] {
                    let mut dx = Array2::<F>::zeros(xv.dim());
                    kernels::gemm(F::one(), &dy.view(), &wv.t(), F::zero(), &mut dx);
                    Self::accumulate(grads, *x, dx.into_dyn());
                }
                if reach[*w] {
                    let mut dw = Array2::<F>::zeros(wv.dim());
                    kernels::gemm(F::one(), &xv.t(), &dy.view(), F::zero(), &mut dw);
                    Self::accumulate(grads, *w, dw.into_dyn());
                }
                if let Some(bb) = b {
                    if reach[*bb] {
                        let db = dy.sum_axis(Axis(0));
                        Self::accumulate(grads, *bb, db.into_dyn());
                    }
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            } => {
                let xv = self.nodes[*x].value.view().into_dimensionality().unwrap();
                let gv = self.nodes[*gamma]
                    .value
                    .view()
                    .into_dimensionality()
                    .unwrap();
                let dout = g.view().into_dimensionality().unwrap();
                let (dx, dgamma, dbeta) =
                    kernels::group_norm_backward(&xv, &gv, stats, *groups, &dout);
                if reach[*x] {
                    Self::accumulate(grads, *x, dx.into_dyn());
                }
                if reach[*gamma] {
                    Self::accumulate(grads, *gamma, dgamma.into_dyn());
                }
                if reach[*beta] {
                    Self::accumulate(grads, *beta, dbeta.into_dyn());
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                stats,
            } => {
                let xv = self.nodes[*x].value.view().into_dimensionality().unwrap();
                let gv = self.nodes[*gamma]
                    .value
                    .view()
                    .into_dimensionality()
                    .unwrap();
                let dout = g.view().into_dimensionality().unwrap();
                let (dx, dgamma, dbeta) =
                    kernels::batch_norm_train_backward(&xv, &gv, stats, &dout);
                if reach[*x] {
                    Self::accumulate(grads, *x, dx.into_dyn());
                }
                if reach[*gamma] {
                    Self::accumulate(grads, *gamma, dgamma.into_dyn());
                }
                if reach[*beta] {
                    Self::accumulate(grads, *beta, dbeta.into_dyn());
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let xv = &self.nodes[*x].value;
                let gv = &self.nodes[*gamma].value;
                let shape = xv.shape();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let plane = h * w;
                let gs = g.as_slice().unwrap();
                let xs = xv.as_slice().unwrap();
                if reach[*x] {
                    let mut dx = ArrayD::<F>::zeros(xv.raw_dim());
                    let dxs = dx.as_slice_mut().unwrap();
                    for ni in 0..n {
                        for ch in 0..c {
                            let off = (ni * c + ch) * plane;
                            let coef = gv[ch] * rstd[ch];
                            for q in 0..plane {
                                dxs[off + q] = gs[off + q] * coef;
                            }
                        }
                    }
                    Self::accumulate(grads, *x, dx);
                }
                if reach[*gamma] || reach[*beta] {
                    let mut dgamma = Array1::<F>::zeros(c);
                    let mut dbeta = Array1::<F>::zeros(c);
                    for ni in 0..n {
                        for ch in 0..c {
                            let off = (ni * c + ch) * plane;
                            for q in 0..plane {
                                let xh = (xs[off + q] - mean[ch]) * rstd[ch];
                                dgamma[ch] = dgamma[ch] + gs[off + q] * xh;
                                dbeta[ch] = dbeta[ch] + gs[off + q];
                            }
                        }
                    }
                    if reach[*gamma] {
                        Self::accumulate(grads, *gamma, dgamma.into_dyn());
                    }
                    if reach[*beta] {
                        Self::accumulate(grads, *beta, dbeta.into_dyn());
                    }
                }
            }
            Op::Relu { x } => {
                let y = &self.nodes[id].value;
                let mut dx = g.clone();
                dx.zip_mut_with(y, |d, &yy| {
                    if yy <= F::zero() {
                        *d = F::zero();
                    }
                });
                Self::accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                if reach[*a] {
                    Self::accumulate(grads, *a, g.clone());
                }
                if reach[*b] {
                    Self::accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if reach[*a] {
                    Self::accumulate(grads, *a, g.clone());
                }
                if reach[*b] {
                    Self::accumulate(grads, *b, g.mapv(|v| -v));
                }
            }
            Op::Scale { x, c } => {
                Self::accumulate(grads, *x, g.mapv(|v| v * *c));
            }
            Op::Square { x } => {
                let two = F::from_f64(2.0);
                let mut dx = g.clone();
                dx.zip_mut_with(&self.nodes[*x].value, |d, &xx| *d = *d * two * xx);
                Self::accumulate(grads, *x, dx);
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0usize;
                for &p in parts {
                    let len = self.nodes[p].value.shape()[*axis];
                    if reach[p] {
                        let slice = g
                            .slice_axis(
                                Axis(*axis),
                                ndarray::Slice::from(offset..offset + len),
                            )
                            .as_standard_layout()
                            .into_owned();
                        Self::accumulate(grads, p, slice);
                    }
                    offset += len;
                }
            }
            Op::SliceRows { x, start, end } => {
                let mut dx = ArrayD::<F>::zeros(self.nodes[*x].value.raw_dim());
                dx.slice_axis_mut(Axis(0), ndarray::Slice::from(*start..*end))
                    .assign(g);
                Self::accumulate(grads, *x, dx);
            }
            Op::MaxPool { x, arg, in_hw } => {
                let dout = g.view().into_dimensionality().unwrap();
                let dx = kernels::maxpool_backward(&dout, arg, in_hw.0, in_hw.1);
                Self::accumulate(grads, *x, dx.into_dyn());
            }
            Op::Upsample2x { x, in_hw } => {
                let dout = g.view().into_dimensionality().unwrap();
                let dx = kernels::upsample2x_backward(&dout, in_hw.0, in_hw.1);
                Self::accumulate(grads, *x, dx.into_dyn());
            }
            Op::Gap { x, in_hw } => {
                let (h, w) = *in_hw;
                let scale = F::one() / F::from_f64((h * w) as f64);
                let dy: Array2<F> = g.view().into_dimensionality().unwrap().to_owned();
                let (n, c) = dy.dim();
                let mut dx = ndarray::Array4::<F>::zeros((n, c, h, w));
                for ni in 0..n {
                    for ch in 0..c {
                        let v = dy[(ni, ch)] * scale;
                        dx.index_axis_mut(Axis(0), ni)
                            .index_axis_mut(Axis(0), ch)
                            .fill(v);
                    }
                }
                Self::accumulate(grads, *x, dx.into_dyn());
            }
            Op::Reshape { x } => {
                let dx = g
                    .to_shape(self.nodes[*x].value.raw_dim())
                    .unwrap()
                    .as_standard_layout()
                    .into_owned();
                Self::accumulate(grads, *x, dx);
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let gv = g.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let (n, k) = probs.dim();
                let mut dl = Array2::<F>::zeros((n, k));
                for i in 0..n {
                    let gi = gv[i];
                    for j in 0..k {
                        let onehot = if j == labels[i] { F::one() } else { F::zero() };
                        dl[(i, j)] = gi * (probs[(i, j)] - onehot);
                    }
                }
                Self::accumulate(grads, *logits, dl.into_dyn());
            }
            Op::Triplet { emb, cache, .. } => {
                let gscalar = *g.iter().next().unwrap();
                let ev: Array2<F> = self.nodes[*emb]
                    .value
                    .view()
                    .into_dimensionality()
                    .unwrap()
                    .to_owned();
                let (n, d) = ev.dim();
                let coef = gscalar / F::from_f64(cache.anchors as f64);
                let mut dnormed = Array2::<F>::zeros((n, d));
                for a in 0..n {
                    let Some((p, ng, active)) = cache.picks[a] else {
                        continue;
                    };
                    if !active {
                        continue;
                    }
                    // d(dp)/d ê: (ê_a - ê_p)/dp into rows a, p
                    let dp = cache.dist[(a, p)];
                    let dn = cache.dist[(a, ng)];
                    for kk in 0..d {
                        let diff_p = (cache.normed[(a, kk)] - cache.normed[(p, kk)]) / dp;
                        dnormed[(a, kk)] = dnormed[(a, kk)] + coef * diff_p;
                        dnormed[(p, kk)] = dnormed[(p, kk)] - coef * diff_p;
                        let diff_n = (cache.normed[(a, kk)] - cache.normed[(ng, kk)]) / dn;
                        dnormed[(a, kk)] = dnormed[(a, kk)] - coef * diff_n;
                        dnormed[(ng, kk)] = dnormed[(ng, kk)] + coef * diff_n;
                    }
                }
                // through normalization: de = (dê - ê (ê . dê)) / ||e||
                let mut de = Array2::<F>::zeros((n, d));
                for i in 0..n {
                    let mut dot = F::zero();
                    for kk in 0..d {
                        dot = dot + cache.normed[(i, kk)] * dnormed[(i, kk)];
                    }
                    for kk in 0..d {
                        de[(i, kk)] =
                            (dnormed[(i, kk)] - cache.normed[(i, kk)] * dot) / cache.norms[i];
                    }
                }
                Self::accumulate(grads, *emb, de.into_dyn());
            }
            Op::Mean { x } => {
                let v = &self.nodes[*x].value;
                let gscalar = *g.iter().next().unwrap();
                let scale = gscalar / F::from_f64(v.len() as f64);
                Self::accumulate(grads, *x, ArrayD::from_elem(v.raw_dim(), scale));
            }
            Op::MeanRange { x, start, end } => {
                let v = &self.nodes[*x].value;
                let gscalar = *g.iter().next().unwrap();
                let scale = gscalar / F::from_f64((end - start) as f64);
                let mut dx = ArrayD::<F>::zeros(v.raw_dim());
                {
                    let s = dx.as_slice_mut().unwrap();
                    for q in *start..*end {
                        s[q] = scale;
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
        }
    }
}
