//! Adam optimizer with optional decoupled weight decay.

use ndarray::ArrayD;

use super::graph::{Grads, Graph};
use super::params::ParamStore;
use super::El;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay: theta <- theta - lr * wd * theta.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state for one parameter store.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    cfg: AdamConfig,
    m: Vec<Option<ArrayD<F>>>,
    v: Vec<Option<ArrayD<F>>>,
    pub t: u64,
}

impl<F: El> Adam<F> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<F>) -> Self {
        Adam {
            cfg,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
            t: store.len() as u64 * 0, // starts at 0; kept explicit for clarity
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Apply one update from the gradients a backward pass produced for
    /// `store_id`. Slots without a gradient in this step are left untouched
    /// (their moment state does not advance either).
    pub fn step(
        &mut self,
        graph: &Graph<F>,
        grads: &Grads<F>,
        store_id: usize,
        store: &mut ParamStore<F>,
        lr: f64,
    ) {
        self.t += 1;
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let eps = F::from_f64(self.cfg.eps);
        let lrf = F::from_f64(lr);
        let bc1 = F::from_f64(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2 = F::from_f64(1.0 - self.cfg.beta2.powi(self.t as i32));
        let wd = F::from_f64(self.cfg.weight_decay);
        let one = F::one();
        for (node, sid, slot) in graph.param_nodes() {
            if sid != store_id {
                continue;
            }
            let Some(g) = grads.get(node) else { continue };
            if !store.is_trainable(slot) {
                continue;
            }
            if self.m[slot].is_none() {
                self.m[slot] = Some(ArrayD::zeros(g.raw_dim()));
                self.v[slot] = Some(ArrayD::zeros(g.raw_dim()));
            }
            let m = self.m[slot].as_mut().unwrap();
            let v = self.v[slot].as_mut().unwrap();
            let theta = store.value_mut(slot);
            ndarray::Zip::from(theta)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|t, m, v, &gi| {
                    *m = b1 * *m + (one - b1) * gi;
                    *v = b2 * *v + (one - b2) * gi * gi;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    let mut nt = *t - lrf * mhat / (vhat.sqrt() + eps);
                    if wd > F::zero() {
                        nt = nt - lrf * wd * *t;
                    }
                    *t = nt;
                });
        }
    }

    /// Serialize moment state as named arrays for checkpointing
    /// (slot-indexed; only initialized slots are emitted).
    pub fn export_state(&self, prefix: &str) -> Vec<(String, ArrayD<F>)> {
        let mut out = Vec::new();
        for (slot, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            if let (Some(m), Some(v)) = (m, v) {
                out.push((format!("{prefix}/m/{slot}"), m.clone()));
                out.push((format!("{prefix}/v/{slot}"), v.clone()));
            }
        }
        out
    }

    pub fn import_state(&mut self, prefix: &str, named: &[(String, ArrayD<F>)], t: u64) {
        self.t = t;
        for (name, arr) in named {
            if let Some(rest) = name.strip_prefix(&format!("{prefix}/m/")) {
                if let Ok(slot) = rest.parse::<usize>() {
                    self.m[slot] = Some(arr.clone());
                }
            } else if let Some(rest) = name.strip_prefix(&format!("{prefix}/v/")) {
                if let Ok(slot) = rest.parse::<usize>() {
                    self.v[slot] = Some(arr.clone());
                }
            }
        }
    }
}
