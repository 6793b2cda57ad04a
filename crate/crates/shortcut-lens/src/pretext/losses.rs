//! Scalar pretext losses on plain arrays. The training loop computes the
//! same quantities through the autodiff graph; these standalone versions
//! serve evaluation and act as independent cross-checks of the graph ops.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Mean softmax cross-entropy over a batch of logits (M, K) with integer
/// labels. Numerically stable via per-row max subtraction; always
/// non-negative.
pub fn classification_loss(logits: &Array2<f32>, labels: &[usize]) -> Result<f32> {
    let (m, k) = logits.dim();
    if labels.len() != m {
        return Err(Error::Shape(format!(
            "classification loss: {m} logit rows but {} labels",
            labels.len()
        )));
    }
    if m == 0 {
        return Err(Error::Shape("classification loss: empty batch".into()));
    }
    let mut total = 0.0f64;
    for (row, &label) in logits.outer_iter().zip(labels) {
        if label >= k {
            return Err(Error::Shape(format!(
                "classification loss: label {label} out of range for {k} classes"
            )));
        }
        let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f32>().ln();
        total += (lse - row[label]) as f64;
    }
    Ok((total / m as f64) as f32)
}

/// `classification_loss` specialized to the four quarter-turn classes.
pub fn rotation_loss(logits: &Array2<f32>, labels: &[usize]) -> Result<f32> {
    if logits.ncols() != 4 {
        return Err(Error::Shape(format!(
            "rotation loss expects 4 logit columns, got {}",
            logits.ncols()
        )));
    }
    classification_loss(logits, labels)
}

/// Triplet loss over embeddings (M, D) grouped by source image. Embeddings
/// are L2-normalized first. Per anchor: hardest positive (most distant
/// same-group row) and nearest negative (closest other-group row), ties to
/// the lowest index; hinge max(0, d(a,p) - d(a,n) + margin); mean over
/// anchors that have both.
pub fn exemplar_triplet_loss(embeddings: &Array2<f32>, groups: &[usize], margin: f32) -> Result<f32> {
    let (n, d) = embeddings.dim();
    if groups.len() != n {
        return Err(Error::Shape(format!(
            "triplet loss: {n} embedding rows but {} group ids",
            groups.len()
        )));
    }
    let distinct: std::collections::BTreeSet<_> = groups.iter().collect();
    if distinct.len() < 2 {
        return Err(Error::Shape(
            "triplet loss needs at least two groups in the batch".into(),
        ));
    }
    let eps = 1e-12f32;
    let mut normed = Array2::<f32>::zeros((n, d));
    for i in 0..n {
        let ssq: f32 = embeddings.row(i).iter().map(|&v| v * v).sum();
        let nm = (ssq + eps).sqrt();
        for j in 0..d {
            normed[(i, j)] = embeddings[(i, j)] / nm;
        }
    }
    let mut dist = Array2::<f32>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let ssq: f32 = (0..d).map(|k| {
                let df = normed[(i, k)] - normed[(j, k)];
                df * df
            }).sum();
            let dd = (ssq + eps).sqrt();
            dist[(i, j)] = dd;
            dist[(j, i)] = dd;
        }
    }
    let mut total = 0.0f32;
    let mut anchors = 0usize;
    for a in 0..n {
        let mut dp: Option<f32> = None;
        for p in 0..n {
            if p != a && groups[p] == groups[a] && dp.map(|best| dist[(a, p)] > best).unwrap_or(true) {
                dp = Some(dist[(a, p)]);
            }
        }
        let Some(dp) = dp else { continue };
        let mut dn: Option<f32> = None;
        for g in 0..n {
            if groups[g] != groups[a] && dn.map(|best| dist[(a, g)] < best).unwrap_or(true) {
                dn = Some(dist[(a, g)]);
            }
        }
        let Some(dn) = dn else { continue };
        anchors += 1;
        total += (dp - dn + margin).max(0.0);
    }
    if anchors == 0 {
        return Err(Error::Shape(
            "triplet loss: no anchor has both a positive and a negative".into(),
        ));
    }
    Ok(total / anchors as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Graph;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_log_class_count() {
        let logits = Array2::<f32>::zeros((5, 4));
        let loss = rotation_loss(&logits, &[0, 1, 2, 3, 0]).unwrap();
        assert!((loss - 4.0f32.ln()).abs() < 1e-6, "got {loss}");
        let logits8 = Array2::<f32>::from_elem((3, 8), 0.7);
        let loss8 = classification_loss(&logits8, &[5, 0, 7]).unwrap();
        assert!((loss8 - 8.0f32.ln()).abs() < 1e-6, "got {loss8}");
        let logits100 = Array2::<f32>::zeros((2, 100));
        let l100 = classification_loss(&logits100, &[99, 0]).unwrap();
        assert!((l100 - 100.0f32.ln()).abs() < 1e-5, "got {l100}");
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let mut logits = Array2::<f32>::zeros((2, 4));
        logits[(0, 1)] = 30.0;
        logits[(1, 3)] = 30.0;
        let loss = rotation_loss(&logits, &[1, 3]).unwrap();
        assert!(loss < 1e-6, "got {loss}");
    }

    #[test]
    fn single_hot_logit_oracle() {
        // -ln(e / (e + 3)) = ln(1 + 3/e)
        let logits = array![[1.0f32, 0.0, 0.0, 0.0]];
        let loss = rotation_loss(&logits, &[0]).unwrap();
        let expect = (1.0 + 3.0 * (-1.0f64).exp()).ln() as f32;
        assert!((loss - expect).abs() < 1e-6, "got {loss}, want {expect}");
        assert!((loss - 0.7437).abs() < 1e-4);
    }

    #[test]
    fn out_of_range_label_is_an_error() {
        let logits = Array2::<f32>::zeros((1, 4));
        assert!(rotation_loss(&logits, &[4]).is_err());
        assert!(classification_loss(&logits, &[9]).is_err());
    }

    #[test]
    fn separated_orthogonal_groups_give_zero_loss() {
        // two groups of identical embeddings on orthogonal axes: d(a,p)=0,
        // d(a,n)=sqrt(2) > margin
        let e = array![
            [1.0f32, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0]
        ];
        let loss = exemplar_triplet_loss(&e, &[0, 0, 1, 1], 0.5).unwrap();
        assert!(loss.abs() < 1e-5, "got {loss}");
    }

    #[test]
    fn margin_exceeded_by_margin_gives_twice_margin() {
        // symmetric 4-point configuration where every anchor sees
        // d(a,p) = dp and d(a,n) = dn for the same dp, dn:
        // group 0 at (cos t, +-sin t, 0), group 1 at (-cos t, 0, +-sin t)
        let t = 70.0f64.to_radians();
        let (c, s) = (t.cos(), t.sin());
        let e = array![
            [c as f32, s as f32, 0.0],
            [c as f32, -s as f32, 0.0],
            [-c as f32, 0.0, s as f32],
            [-c as f32, 0.0, -s as f32]
        ];
        let dp = 2.0 * s;
        let dn = (2.0 + 2.0 * c * c).sqrt();
        let margin = (dp - dn) as f32; // dp = dn + margin exactly
        assert!(margin > 0.0);
        let loss = exemplar_triplet_loss(&e, &[0, 0, 1, 1], margin).unwrap();
        assert!(
            (loss - 2.0 * margin).abs() < 1e-5,
            "got {loss}, want {}",
            2.0 * margin
        );
    }

    #[test]
    fn loss_is_invariant_to_batch_permutation_and_rotation() {
        let e = array![
            [0.9f32, 0.1, 0.3],
            [0.8, 0.2, 0.25],
            [-0.1, 0.9, 0.1],
            [0.0, 1.0, 0.2],
            [0.2, 0.1, -0.9],
            [0.15, 0.0, -1.0]
        ];
        let groups = [0usize, 0, 1, 1, 2, 2];
        let base = exemplar_triplet_loss(&e, &groups, 0.4).unwrap();
        // batch permutation
        let order = [3usize, 0, 5, 2, 4, 1];
        let mut ep = Array2::<f32>::zeros((6, 3));
        let mut gp = [0usize; 6];
        for (new, &old) in order.iter().enumerate() {
            ep.row_mut(new).assign(&e.row(old));
            gp[new] = groups[old];
        }
        let permuted = exemplar_triplet_loss(&ep, &gp, 0.4).unwrap();
        assert!((base - permuted).abs() < 1e-6);
        // orthogonal transform: coordinate cycle with a sign flip
        let mut er = Array2::<f32>::zeros((6, 3));
        for i in 0..6 {
            er[(i, 0)] = -e[(i, 2)];
            er[(i, 1)] = e[(i, 0)];
            er[(i, 2)] = e[(i, 1)];
        }
        let rotated = exemplar_triplet_loss(&er, &groups, 0.4).unwrap();
        assert!((base - rotated).abs() < 1e-6);
    }

    #[test]
    fn single_group_is_an_error() {
        let e = Array2::<f32>::ones((4, 3));
        assert!(exemplar_triplet_loss(&e, &[0, 0, 0, 0], 0.5).is_err());
    }

    #[test]
    fn plain_losses_agree_with_graph_ops() {
        let logits = array![
            [0.3f32, -1.2, 0.8, 0.05],
            [2.0, 0.0, -0.5, 1.0],
            [-0.3, 0.4, 0.1, 0.9]
        ];
        let labels = [2usize, 0, 1];
        let plain = classification_loss(&logits, &labels).unwrap();
        let mut g = Graph::<f32>::new();
        let x = g.input(logits.clone().into_dyn(), false);
        let ce = g.softmax_ce(x, &labels);
        let loss = g.mean(ce);
        assert!((plain - g.scalar(loss)).abs() < 1e-6);

        let e = array![
            [0.9f32, 0.1, 0.3],
            [0.8, 0.2, 0.25],
            [-0.1, 0.9, 0.1],
            [0.0, 1.0, 0.2]
        ];
        let groups = [0usize, 0, 1, 1];
        let plain_t = exemplar_triplet_loss(&e, &groups, 0.5).unwrap();
        let mut g2 = Graph::<f32>::new();
        let emb = g2.input(e.into_dyn(), false);
        let tl = g2.triplet_loss(emb, &groups, 0.5);
        assert!((plain_t - g2.scalar(tl)).abs() < 1e-6);
    }
}
