//! Minimal reverse-mode autodiff engine over `ndarray`.
//!
//! Provides what the training loop needs and nothing more: an eager tape
//! ([`Graph`]) with 2-D convolution, dense layers, group/batch norm, ReLU,
//! max-pool, 2x bilinear upsampling, global average pooling, batch/channel
//! concatenation, fused softmax cross-entropy, and a fused triplet loss.
//! Backward passes are target-pruned: gradients are only propagated
//! through subgraphs that can reach a requested parameter store or input,
//! which is how one shared forward pass serves two differently-routed losses.
//!
//! The engine is generic over [`El`] (`f32` for training, `f64` for
//! finite-difference gradient verification).

pub mod adam;
pub mod graph;
pub mod init;
pub mod kernels;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use graph::{Grads, Graph, NodeId, StoreNodes, Targets};
pub use init::{he_conv, he_dense, ones, output_dense, zeros};
pub use params::ParamStore;

/// Scalar element for the engine: f32 in production, f64 in gradient checks.
pub trait El: ndarray::NdFloat + std::iter::Sum {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// C <- alpha * A(m,k) * B(k,n) + beta * C(m,n), arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid m*k / k*n / m*n matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl El for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl El for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
