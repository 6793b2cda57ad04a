//! Weight initializers. All draws go through a caller-provided ChaCha
//! stream so network construction is a pure function of (config, seed).

use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;

use super::El;
use crate::util::normal_f64;

/// He-normal init for conv weights (Co, Ci, kh, kw): std = sqrt(2 / fan_in).
pub fn he_conv<F: El>(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> ArrayD<F> {
    let fan_in = shape.1 * shape.2 * shape.3;
    let std = (2.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(
        vec![shape.0, shape.1, shape.2, shape.3],
        || F::from_f64(normal_f64(rng) * std),
    )
}

/// He-normal init for dense weights (in, out): std = sqrt(2 / in).
pub fn he_dense<F: El>(shape: (usize, usize), rng: &mut ChaCha8Rng) -> ArrayD<F> {
    let std = (2.0 / shape.0 as f64).sqrt();
    ArrayD::from_shape_simple_fn(vec![shape.0, shape.1], || F::from_f64(normal_f64(rng) * std))
}

/// Small-scale normal init for output layers: keeps initial predictions
/// near-uniform (classification) or near-zero (embeddings) while still
/// breaking symmetry.
pub fn output_dense<F: El>(shape: (usize, usize), rng: &mut ChaCha8Rng) -> ArrayD<F> {
    ArrayD::from_shape_simple_fn(vec![shape.0, shape.1], || F::from_f64(normal_f64(rng) * 0.01))
}

pub fn zeros<F: El>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::zeros(shape.to_vec())
}

pub fn ones<F: El>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::from_elem(shape.to_vec(), F::one())
}
