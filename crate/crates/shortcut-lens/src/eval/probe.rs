//! Multinomial logistic-regression probe trained on frozen features.
//!
//! The probe is deliberately outside the autodiff graph: softmax
//! regression has a closed-form gradient, and keeping it to plain matrix
//! arithmetic makes evaluation fast and exactly reproducible.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::eval::features::FeatureMatrix;
use crate::util::derive_rng;

/// Probe optimization settings. Defaults are the desk-scale recipe:
/// plain minibatch SGD from zero weights, with the learning rate cut
/// tenfold at two-thirds and five-sixths of the run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            lr: 0.8,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("probe needs at least one epoch"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("probe batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!(
                "probe learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// Epochs at which the learning rate drops by 10x.
    fn milestones(&self) -> (usize, usize) {
        (self.epochs * 2 / 3, self.epochs * 5 / 6)
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        let (m1, m2) = self.milestones();
        let mut lr = self.lr;
        if epoch >= m1 {
            lr *= 0.1;
        }
        if epoch >= m2 {
            lr *= 0.1;
        }
        lr
    }
}

/// Linear classifier `logits = x·w + b` over frozen features.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl LinearProbe {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        LinearProbe {
            w: Array2::zeros((dim, classes)),
            b: Array1::zeros(classes),
        }
    }

    pub fn logits(&self, x: &Array2<f32>) -> Result<Array2<f32>> {
        if x.ncols() != self.w.nrows() {
            return Err(Error::Shape(format!(
                "probe expects {}-dim features, got {}",
                self.w.nrows(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.w) + &self.b)
    }

    /// Predicted class per row: argmax of the logits, first index on ties.
    pub fn predict(&self, x: &Array2<f32>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| argmax_first(row.as_slice().expect("row is contiguous")))
            .collect())
    }
}

fn argmax_first(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy summary of a probe on a feature matrix.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProbeResult {
    /// Fraction of rows whose argmax matches the label.
    pub top1: f64,
    /// Per-class accuracy; `None` for classes with no examples.
    pub per_class: Vec<Option<f64>>,
}

/// Train a probe on `data` with minibatch softmax-regression SGD.
///
/// Features are consumed exactly as given — no normalization or
/// augmentation — so the score reflects the representation alone. The
/// epoch shuffles derive from `cfg.seed`, making training deterministic.
pub fn train_linear_probe(data: &FeatureMatrix, cfg: &ProbeConfig) -> Result<LinearProbe> {
    cfg.validate()?;
    if data.class_count < 2 {
        return Err(Error::config(format!(
            "probe needs at least 2 classes, got {}",
            data.class_count
        )));
    }
    let n = data.len();
    let d = data.dim();
    let k = data.class_count;
    let mut probe = LinearProbe::zeros(d, k);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch) as f32;
        let order = shuffled_indices(n, cfg.seed, epoch);
        let mut lo = 0usize;
        while lo < n {
            let hi = (lo + cfg.batch_size).min(n);
            let idx = &order[lo..hi];
            let bs = idx.len();
            let x = data.features.select(Axis(0), idx);
            let logits = x.dot(&probe.w) + &probe.b;
            // softmax rows with the max subtracted for stability
            let mut p = logits;
            for (r, mut row) in p.rows_mut().into_iter().enumerate() {
                let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                row.mapv_inplace(|v| (v - m).exp());
                let s: f32 = row.sum();
                row.mapv_inplace(|v| v / s);
                // gradient of mean CE: (p - onehot)/batch
                let y = data.labels[idx[r]];
                row[y] -= 1.0;
                row.mapv_inplace(|v| v / bs as f32);
            }
            let gw = x.t().dot(&p);
            let gb = p.sum_axis(Axis(0));
            probe.w.scaled_add(-lr, &gw);
            probe.b.scaled_add(-lr, &gb);
            lo = hi;
        }
    }
    Ok(probe)
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = derive_rng(seed, &["probe-epoch", &epoch.to_string()]);
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher–Yates, fixed sweep so the permutation depends only on the rng
    for i in (1..n).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    order
}

/// Mean cross-entropy of `probe` on `data` — the probe's training
/// objective, handy for convergence checks.
pub fn mean_cross_entropy(probe: &LinearProbe, data: &FeatureMatrix) -> Result<f64> {
    let logits = probe.logits(&data.features)?;
    let mut total = 0.0f64;
    for (row, &y) in logits.rows().into_iter().zip(data.labels.iter()) {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = m + row
            .iter()
            .map(|&v| (v as f64 - m).exp())
            .sum::<f64>()
            .ln();
        total += lse - row[y] as f64;
    }
    Ok(total / data.len() as f64)
}

/// Score `probe` on `data`: overall and per-class top-1 accuracy.
pub fn evaluate_probe(probe: &LinearProbe, data: &FeatureMatrix) -> Result<ProbeResult> {
    let preds = probe.predict(&data.features)?;
    let k = data.class_count;
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    let mut correct = 0usize;
    for (&pred, &label) in preds.iter().zip(data.labels.iter()) {
        totals[label] += 1;
        if pred == label {
            hits[label] += 1;
            correct += 1;
        }
    }
    Ok(ProbeResult {
        top1: correct as f64 / data.len() as f64,
        per_class: (0..k)
            .map(|c| {
                if totals[c] == 0 {
                    None
                } else {
                    Some(hits[c] as f64 / totals[c] as f64)
                }
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::features::{Provenance, ReprMode};
    use crate::util::derive_rng;
    use rand::Rng;

    fn matrix(features: Array2<f32>, labels: Vec<usize>, k: usize) -> FeatureMatrix {
        FeatureMatrix::new(
            features,
            labels,
            k,
            Provenance {
                checkpoint: "test".into(),
                lens_used: false,
                mode: ReprMode::Plain,
            },
        )
        .unwrap()
    }

    /// Two well-separated Gaussian blobs in 2-D, labels 0/1.
    fn blobs(n_per: usize, seed: u64) -> FeatureMatrix {
        let mut rng = derive_rng(seed, &["blobs"]);
        let n = 2 * n_per;
        let mut x = Array2::<f32>::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let cx = if c == 0 { -2.0 } else { 2.0 };
            x[(i, 0)] = cx + rng.random_range(-0.5..0.5);
            x[(i, 1)] = rng.random_range(-0.5..0.5);
            labels.push(c);
        }
        matrix(x, labels, 2)
    }

    #[test]
    fn separable_blobs_reach_perfect_accuracy() {
        let data = blobs(64, 7);
        let probe = train_linear_probe(&data, &ProbeConfig::default()).unwrap();
        let res = evaluate_probe(&probe, &data).unwrap();
        assert_eq!(res.top1, 1.0);
        assert_eq!(res.per_class, vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn shuffled_labels_sit_at_chance() {
        // Features carry no label information: held-out accuracy ~ 1/k.
        let k = 10;
        let noise = |tag: &str, n: usize| {
            let mut rng = derive_rng(11, &["chance", tag]);
            let mut x = Array2::<f32>::zeros((n, 8));
            for v in x.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            matrix(x, labels, k)
        };
        let train = noise("train", 4000);
        let test = noise("test", 4000);
        let cfg = ProbeConfig {
            epochs: 6,
            ..ProbeConfig::default()
        };
        let probe = train_linear_probe(&train, &cfg).unwrap();
        let res = evaluate_probe(&probe, &test).unwrap();
        assert!(
            (res.top1 - 0.1).abs() < 0.03,
            "chance-level accuracy expected, got {}",
            res.top1
        );
    }

    #[test]
    fn duplicated_features_never_train_worse_than_plain() {
        // [f; f] can express every classifier f can, so at convergence the
        // training loss on duplicated features must not exceed the plain
        // loss (and in practice SGD moves the effective weights twice as
        // fast, landing strictly lower on separable data).
        let plain = blobs(64, 77);
        let dup_features = ndarray::concatenate(
            ndarray::Axis(1),
            &[plain.features.view(), plain.features.view()],
        )
        .unwrap();
        let dup = matrix(dup_features, plain.labels.clone(), 2);
        let cfg = ProbeConfig::default();
        let p_plain = train_linear_probe(&plain, &cfg).unwrap();
        let p_dup = train_linear_probe(&dup, &cfg).unwrap();
        let loss_plain = mean_cross_entropy(&p_plain, &plain).unwrap();
        let loss_dup = mean_cross_entropy(&p_dup, &dup).unwrap();
        assert!(
            loss_dup <= loss_plain + 1e-6,
            "duplicate {loss_dup} vs plain {loss_plain}"
        );
        let acc_plain = evaluate_probe(&p_plain, &plain).unwrap().top1;
        let acc_dup = evaluate_probe(&p_dup, &dup).unwrap().top1;
        assert!(acc_dup >= acc_plain);
    }

    #[test]
    fn per_class_mean_on_balanced_set_equals_top1() {
        let data = blobs(50, 91); // 50 per class, balanced
        let probe = train_linear_probe(
            &data,
            &ProbeConfig {
                epochs: 2,
                ..ProbeConfig::default()
            },
        )
        .unwrap();
        let res = evaluate_probe(&probe, &data).unwrap();
        let mean: f64 = res
            .per_class
            .iter()
            .map(|c| c.expect("both classes present"))
            .sum::<f64>()
            / res.per_class.len() as f64;
        assert!((mean - res.top1).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(32, 21);
        let cfg = ProbeConfig::default();
        let a = train_linear_probe(&data, &cfg).unwrap();
        let b = train_linear_probe(&data, &cfg).unwrap();
        assert_eq!(a.w.mapv(f32::to_bits), b.w.mapv(f32::to_bits));
        assert_eq!(a.b.mapv(f32::to_bits), b.b.mapv(f32::to_bits));
    }

    #[test]
    fn learning_rate_milestones_cut_tenfold() {
        let cfg = ProbeConfig {
            epochs: 30,
            ..ProbeConfig::default()
        };
        assert_eq!(cfg.milestones(), (20, 25));
        assert!((cfg.lr_at(0) - 0.8).abs() < 1e-12);
        assert!((cfg.lr_at(19) - 0.8).abs() < 1e-12);
        assert!((cfg.lr_at(20) - 0.08).abs() < 1e-12);
        assert!((cfg.lr_at(24) - 0.08).abs() < 1e-12);
        assert!((cfg.lr_at(25) - 0.008).abs() < 1e-12);
        assert!((cfg.lr_at(29) - 0.008).abs() < 1e-12);
    }

    #[test]
    fn zero_init_single_step_matches_hand_computed_gradient() {
        // One example, one epoch, full batch: from zero weights the
        // softmax is uniform, so dW = x^T (p - y) with p = 1/k.
        let x = ndarray::array![[1.0f32, 2.0]];
        let data = matrix(x, vec![1], 2);
        let cfg = ProbeConfig {
            epochs: 1,
            batch_size: 8,
            lr: 1.0,
            seed: 0,
        };
        let probe = train_linear_probe(&data, &cfg).unwrap();
        // p = [0.5, 0.5], y = class 1 → grad col0 = 0.5·x, col1 = −0.5·x.
        // With a single epoch both milestones land on epoch 0, so the
        // effective rate is lr·0.01.
        let expect_w = ndarray::array![[-0.005f32, 0.005], [-0.01, 0.01]];
        for (a, b) in probe.w.iter().zip(expect_w.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!((probe.b[0] + 0.005).abs() < 1e-8);
        assert!((probe.b[1] - 0.005).abs() < 1e-8);
    }

    #[test]
    fn per_class_none_for_absent_classes() {
        let x = ndarray::array![[1.0f32, 0.0], [0.9, 0.0]];
        let data = matrix(x, vec![0, 0], 3);
        let probe = LinearProbe::zeros(2, 3);
        let res = evaluate_probe(&probe, &data).unwrap();
        // zero probe predicts class 0 everywhere (argmax ties → first)
        assert_eq!(res.top1, 1.0);
        assert_eq!(res.per_class, vec![Some(1.0), None, None]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let probe = LinearProbe::zeros(4, 2);
        let x = Array2::<f32>::zeros((3, 5));
        assert!(probe.logits(&x).is_err());
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Array2::<f32>::zeros((4, 2));
        let data = matrix(x, vec![0; 4], 1);
        assert!(train_linear_probe(&data, &ProbeConfig::default())
            .unwrap_err()
            .is_config());
    }
}
