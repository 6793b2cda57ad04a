use ndarray::{Array1, Array2, Array4};
use shortcut_lens::nn::kernels::{conv2d, conv2d_backward, gemm, group_norm, group_norm_backward};
use std::time::Instant;

fn main() {
    let n = 128usize;
    // stage-0 shapes: 64 -> 128 channels, 3x3, 32x32
    let x = Array4::<f32>::from_elem((n, 64, 32, 32), 0.1);
    let w = Array4::<f32>::from_elem((128, 64, 3, 3), 0.01);
    let t = Instant::now();
    let y = conv2d(&x.view(), &w.view(), None, 1, 1);
    let fwd = t.elapsed().as_secs_f64();
    let flops = 2.0 * (n * 128 * 64 * 9 * 1024) as f64;
    println!("conv fwd   {:.3}s  {:.1} GFLOP/s", fwd, flops / fwd / 1e9);

    let t = Instant::now();
    let (_dx, _dw, _db) = conv2d_backward(&x.view(), &w.view(), &y.view(), 1, 1, true);
    let bwd = t.elapsed().as_secs_f64();
    println!("conv bwd   {:.3}s  {:.1} GFLOP/s", bwd, 2.0 * flops / bwd / 1e9);

    // pure gemm at the same per-image shape, 128 calls
    let a = Array2::<f32>::from_elem((128, 576), 0.01);
    let b = Array2::<f32>::from_elem((576, 1024), 0.1);
    let mut c = Array2::<f32>::zeros((128, 1024));
    let t = Instant::now();
    for _ in 0..n {
        gemm(1.0f32, &a.view(), &b.view(), 0.0, &mut c);
    }
    let ge = t.elapsed().as_secs_f64();
    println!("gemm x128  {:.3}s  {:.1} GFLOP/s", ge, flops / ge / 1e9);

    // one big gemm, same total flops
    let b2 = Array2::<f32>::from_elem((576, 1024 * n), 0.1);
    let mut c2 = Array2::<f32>::zeros((128, 1024 * n));
    let t = Instant::now();
    gemm(1.0f32, &a.view(), &b2.view(), 0.0, &mut c2);
    let g1 = t.elapsed().as_secs_f64();
    println!("gemm big   {:.3}s  {:.1} GFLOP/s", g1, flops / g1 / 1e9);

    // group norm at stage-0 output shape
    let gamma = Array1::<f32>::ones(128);
    let beta = Array1::<f32>::zeros(128);
    let t = Instant::now();
    let (gy, stats) = group_norm(&y.view(), &gamma.view(), &beta.view(), 16, 1e-5);
    let gn = t.elapsed().as_secs_f64();
    println!("gnorm fwd  {:.3}s  ({:.1} GB/s)", gn, (y.len() * 8) as f64 / gn / 1e9);
    let t = Instant::now();
    let _ = group_norm_backward(&y.view(), &gamma.view(), &stats, 16, &gy.view());
    let gb = t.elapsed().as_secs_f64();
    println!("gnorm bwd  {:.3}s", gb);

    // allocation churn probe: alloc+zero 67MB repeatedly
    let t = Instant::now();
    for _ in 0..20 {
        let v = vec![0.0f32; n * 128 * 1024];
        std::hint::black_box(&v);
    }
    let al = t.elapsed().as_secs_f64();
    println!("alloc 67MB x20  {:.3}s", al);
}
