//! Deterministic randomness and small numeric helpers.
//!
//! All randomness in the crate flows through [`derive_rng`]: a stream is a
//! pure function of the experiment seed plus a list of purpose tags (e.g.
//! `["train", "epoch", "3", "batch"]`). Streams are therefore independent of
//! thread count, call order elsewhere in the program, and resume points,
//! which is what makes bit-exact reruns and exact checkpoint resume possible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG stream from a base seed and purpose tags.
pub fn derive_rng(seed: u64, tags: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for t in tags {
        h.update([0x1f]);
        h.update(t.as_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Derive a sub-seed (for configs that carry per-run seeds).
pub fn derive_seed(seed: u64, tags: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for t in tags {
        h.update([0x1f]);
        h.update(t.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Standard normal via Box–Muller on ChaCha uniforms. Deterministic given
/// the RNG state; avoids a distributions dependency.
pub fn normal_f64(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    // u1 in (0, 1]: guard against ln(0).
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Sample from N(0, sigma^2) truncated to [-bound, bound] by rejection.
pub fn truncated_normal_f64(rng: &mut ChaCha8Rng, sigma: f64, bound: f64) -> f64 {
    assert!(sigma > 0.0 && bound > 0.0);
    loop {
        let v = normal_f64(rng) * sigma;
        if v.abs() <= bound {
            return v;
        }
    }
}

/// Percentile with linear interpolation between order statistics
/// (the "linear" method): rank = p/100 * (n-1) over the sorted values.
pub fn percentile_linear(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    assert!((0.0..=100.0).contains(&p), "percentile out of range");
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in percentile"));
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        let frac = rank - lo as f64;
        v[lo] * (1.0 - frac) + v[hi] * frac
    }
}

/// Pearson correlation in f64. Returns None when either series is constant
/// (the statistic is undefined there, and callers must surface that
/// explicitly rather than emit NaN).
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "pearson: length mismatch");
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// Spearman rank correlation (average ranks for ties), f64.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).expect("non-finite value in ranks"));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // average rank for the tie run [i, j]
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}
