//! Shared building blocks: pre-activation residual units with selectable
//! normalization, used by both the feature extractor and the lens.

use ndarray::Array1;
use rand_chacha::ChaCha8Rng;

use super::{NormKind, StatUpdate};
use crate::nn::{he_conv, ones, zeros, El, Graph, NodeId, ParamStore, StoreNodes};

pub(crate) fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Normalization parameter slots. Running statistics exist only for batch
/// normalization and are stored as non-trainable arrays.
#[derive(Debug, Clone)]
pub(crate) struct NormP {
    pub gamma: usize,
    pub beta: usize,
    pub running: Option<(usize, usize)>, // (mean, var)
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvP {
    pub w: usize,
}

/// Slots of one pre-activation bottleneck unit: shared norm-relu
/// pre-activation, then 1x1 reduce, 3x3 (carries the stride), 1x1 expand,
/// with an optional 1x1 projection shortcut taken from the pre-activation.
#[derive(Debug, Clone)]
pub(crate) struct UnitP {
    pub pre: NormP,
    pub shortcut: Option<ConvP>,
    pub conv1: ConvP,
    pub n1: NormP,
    pub conv2: ConvP,
    pub n2: NormP,
    pub conv3: ConvP,
    pub stride: usize,
}

/// Registers parameters into a store during model construction.
pub(crate) struct Builder<'a, F: El> {
    pub store: &'a mut ParamStore<F>,
    pub rng: &'a mut ChaCha8Rng,
    pub norm: NormKind,
}

impl<F: El> Builder<'_, F> {
    pub fn norm(&mut self, path: &str, channels: usize) -> NormP {
        let gamma = self.store.add(format!("{path}/gamma"), ones::<F>(&[channels]), true);
        let beta = self.store.add(format!("{path}/beta"), zeros::<F>(&[channels]), true);
        let running = match self.norm {
            NormKind::Group => None,
            NormKind::Batch => Some((
                self.store.add(format!("{path}/running_mean"), zeros::<F>(&[channels]), false),
                self.store.add(format!("{path}/running_var"), ones::<F>(&[channels]), false),
            )),
        };
        NormP { gamma, beta, running, channels }
    }

    pub fn conv(&mut self, path: &str, ci: usize, co: usize, k: usize) -> ConvP {
        let w = self.store.add(
            format!("{path}/w"),
            he_conv::<F>((co, ci, k, k), self.rng),
            true,
        );
        ConvP { w }
    }

    /// Pre-activation bottleneck unit: output channels are 4x `base`.
    pub fn unit(&mut self, path: &str, cin: usize, base: usize, stride: usize) -> UnitP {
        let cout = 4 * base;
        let pre = self.norm(&format!("{path}/pre"), cin);
        let shortcut = if cin != cout || stride != 1 {
            Some(self.conv(&format!("{path}/shortcut"), cin, cout, 1))
        } else {
            None
        };
        let conv1 = self.conv(&format!("{path}/conv1"), cin, base, 1);
        let n1 = self.norm(&format!("{path}/n1"), base);
        let conv2 = self.conv(&format!("{path}/conv2"), base, base, 3);
        let n2 = self.norm(&format!("{path}/n2"), base);
        let conv3 = self.conv(&format!("{path}/conv3"), base, cout, 1);
        UnitP { pre, shortcut, conv1, n1, conv2, n2, conv3, stride }
    }
}

/// Applies registered blocks inside a graph during a forward pass.
pub(crate) struct Apply<'a, F: El> {
    pub g: &'a mut Graph<F>,
    pub nodes: &'a mut StoreNodes,
    pub store: &'a ParamStore<F>,
    pub norm: NormKind,
    pub train: bool,
    pub updates: &'a mut Vec<StatUpdate<F>>,
}

const NORM_EPS: f64 = 1e-5;

impl<F: El> Apply<'_, F> {
    fn p(&mut self, slot: usize) -> NodeId {
        self.nodes.node(self.g, self.store, slot)
    }

    pub fn norm(&mut self, np: &NormP, x: NodeId) -> NodeId {
        let gamma = self.p(np.gamma);
        let beta = self.p(np.beta);
        match self.norm {
            NormKind::Group => {
                let groups = gcd(np.channels, 32);
                self.g.group_norm(x, gamma, beta, groups, NORM_EPS)
            }
            NormKind::Batch => {
                let (mean_slot, var_slot) = np.running.expect("batch norm has running stats");
                if self.train {
                    let (y, mean, var) = self.g.batch_norm_train(x, gamma, beta, NORM_EPS);
                    self.updates.push(StatUpdate { mean_slot, var_slot, mean, var });
                    y
                } else {
                    let rm: Array1<F> = self
                        .store
                        .value(mean_slot)
                        .view()
                        .into_dimensionality()
                        .unwrap()
                        .to_owned();
                    let rv: Array1<F> = self
                        .store
                        .value(var_slot)
                        .view()
                        .into_dimensionality()
                        .unwrap()
                        .to_owned();
                    self.g.batch_norm_eval(x, gamma, beta, &rm, &rv, NORM_EPS)
                }
            }
        }
    }

    pub fn norm_relu(&mut self, np: &NormP, x: NodeId) -> NodeId {
        let y = self.norm(np, x);
        self.g.relu(y)
    }

    pub fn conv(&mut self, cp: &ConvP, x: NodeId, stride: usize, pad: usize) -> NodeId {
        let w = self.p(cp.w);
        self.g.conv2d(x, w, None, stride, pad)
    }

    pub fn unit(&mut self, up: &UnitP, x: NodeId) -> NodeId {
        let pre = self.norm_relu(&up.pre, x);
        let short = match &up.shortcut {
            Some(sc) => self.conv(sc, pre, up.stride, 0),
            None => x,
        };
        let mut h = self.conv(&up.conv1, pre, 1, 0);
        h = self.norm_relu(&up.n1, h);
        h = self.conv(&up.conv2, h, up.stride, 1);
        h = self.norm_relu(&up.n2, h);
        h = self.conv(&up.conv3, h, 1, 0);
        self.g.add(short, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gcd_picks_group_counts() {
        assert_eq!(gcd(64, 32), 32);
        assert_eq!(gcd(3, 32), 1);
        assert_eq!(gcd(2, 32), 2);
        assert_eq!(gcd(48, 32), 16);
    }
}
