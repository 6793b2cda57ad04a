//! Dense numeric kernels used by the graph ops.
//!
//! Layout convention: activations are NCHW, convolution weights are
//! (out_ch, in_ch, kh, kw), dense weights are (in, out). All kernels are
//! single-threaded with fixed iteration order so results are bit-stable.

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4};

use super::El;

/// C <- alpha * A @ B + beta * C for arbitrary-stride views.
pub fn gemm<F: El>(
    alpha: F,
    a: &ArrayView2<F>,
    b: &ArrayView2<F>,
    beta: F,
    c: &mut Array2<F>,
) {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "gemm: inner dims {k} vs {k2}");
    assert_eq!(c.dim(), (m, n), "gemm: output dim");
    let rsa = a.strides()[0];
    let csa = a.strides()[1];
    let rsb = b.strides()[0];
    let csb = b.strides()[1];
    let rsc = c.strides()[0];
    let csc = c.strides()[1];
    unsafe {
        F::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Output spatial size of a convolution/pool along one axis.
pub fn out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= k,
        "window {k} larger than padded input {input}+2*{pad}"
    );
    (input + 2 * pad - k) / stride + 1
}

/// im2col: x (N,C,H,W) -> col (C*kh*kw, N*Ho*Wo), zero padding.
pub fn im2col<F: El>(
    x: &ArrayView4<F>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let ho = out_size(h, kh, stride, pad);
    let wo = out_size(w, kw, stride, pad);
    let p = ho * wo;
    let mut col = Array2::<F>::zeros((c * kh * kw, n * p));
    let xs = x.as_slice().expect("im2col: x must be contiguous");
    let cs = col.as_slice_mut().unwrap();
    let np = n * p;
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let row_base = row * np;
                for ni in 0..n {
                    let x_base = (ni * c + ci) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * stride + i) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = x_base + iy as usize * w;
                        let out_base = row_base + ni * p + oy * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + j) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cs[out_base + ox] = xs[x_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// col2im: scatter-add the im2col transpose. dcol (C*kh*kw, N*Ho*Wo) -> dx (N,C,H,W).
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<F: El>(
    dcol: &ArrayView2<F>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dx: &mut Array4<F>,
) {
    let ho = out_size(h, kh, stride, pad);
    let wo = out_size(w, kw, stride, pad);
    let p = ho * wo;
    assert_eq!(dcol.dim(), (c * kh * kw, n * p));
    let dcs = dcol.as_slice().expect("col2im: dcol contiguous");
    let dxs = dx.as_slice_mut().unwrap();
    let np = n * p;
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let row_base = row * np;
                for ni in 0..n {
                    let x_base = (ni * c + ci) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * stride + i) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = x_base + iy as usize * w;
                        let in_base = row_base + ni * p + oy * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + j) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dxs[x_row + ix as usize] = dxs[x_row + ix as usize] + dcs[in_base + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Fill `col` (C*kh*kw, Ho*Wo, row-major) with the patch matrix of ONE
/// image whose planes start at `xs[x0..]`. Padded positions must already
/// be zero (caller zeroes the buffer when pad > 0); stride-1 interior
/// spans are block-copied.
#[allow(clippy::too_many_arguments)]
fn im2col_one<F: El>(
    xs: &[F],
    x0: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [F],
) {
    let p = ho * wo;
    for ci in 0..c {
        let x_base = x0 + ci * h * w;
        for i in 0..kh {
            for j in 0..kw {
                let row_base = ((ci * kh + i) * kw + j) * p;
                for oy in 0..ho {
                    let iy = (oy * stride + i) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_row = x_base + iy as usize * w;
                    let out_base = row_base + oy * wo;
                    if stride == 1 {
                        // ox + j - pad must land in [0, w)
                        let lo = pad.saturating_sub(j);
                        let hi = wo.min((w + pad).saturating_sub(j));
                        if lo < hi {
                            let src = x_row + lo + j - pad;
                            col[out_base + lo..out_base + hi]
                                .copy_from_slice(&xs[src..src + (hi - lo)]);
                        }
                    } else {
                        for ox in 0..wo {
                            let ix = (ox * stride + j) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            col[out_base + ox] = xs[x_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add one image's column gradient back onto its input planes
/// (adjoint of `im2col_one`).
#[allow(clippy::too_many_arguments)]
fn col2im_one<F: El>(
    dcol: &[F],
    dxs: &mut [F],
    x0: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let p = ho * wo;
    for ci in 0..c {
        let x_base = x0 + ci * h * w;
        for i in 0..kh {
            for j in 0..kw {
                let row_base = ((ci * kh + i) * kw + j) * p;
                for oy in 0..ho {
                    let iy = (oy * stride + i) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_row = x_base + iy as usize * w;
                    let in_base = row_base + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + j) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dxs[x_row + ix as usize] = dxs[x_row + ix as usize] + dcol[in_base + ox];
                    }
                }
            }
        }
    }
}

/// Forward convolution. x (N,C,H,W), w (Co,Ci,kh,kw), optional bias (Co).
/// Streams image by image with a reused patch buffer so peak scratch is
/// O(C*kh*kw*Ho*Wo) regardless of batch size.
pub fn conv2d<F: El>(
    x: &ArrayView4<F>,
    w: &ArrayView4<F>,
    b: Option<&ArrayView1<F>>,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let (n, c, h, wd) = x.dim();
    let (co, ci, kh, kw) = w.dim();
    assert_eq!(c, ci, "conv2d: channel mismatch {c} vs {ci}");
    let ho = out_size(h, kh, stride, pad);
    let wo = out_size(wd, kw, stride, pad);
    let p = ho * wo;
    let ckk = c * kh * kw;
    let wmat = w
        .to_shape((co, ckk))
        .expect("conv2d: weight reshape");
    let xs = x.as_slice().expect("conv2d: x must be contiguous");
    let mut out = Array4::<F>::zeros((n, co, ho, wo));
    let os = out.as_slice_mut().unwrap();
    let mut col = vec![F::zero(); ckk * p];
    for ni in 0..n {
        if pad > 0 {
            col.fill(F::zero());
        }
        im2col_one(xs, ni * c * h * wd, c, h, wd, kh, kw, stride, pad, ho, wo, &mut col);
        let dst = ni * co * p;
        unsafe {
            F::gemm(
                co,
                ckk,
                p,
                F::one(),
                wmat.as_ptr(),
                ckk as isize,
                1,
                col.as_ptr(),
                p as isize,
                1,
                F::zero(),
                os[dst..].as_mut_ptr(),
                p as isize,
                1,
            );
        }
        if let Some(bb) = b {
            for coi in 0..co {
                let bias = bb[coi];
                let row = dst + coi * p;
                for v in &mut os[row..row + p] {
                    *v = *v + bias;
                }
            }
        }
    }
    out
}

/// Backward convolution: returns (dx, dw, db). Streams image by image,
/// rebuilding each patch matrix once into a reused buffer.
pub fn conv2d_backward<F: El>(
    x: &ArrayView4<F>,
    w: &ArrayView4<F>,
    dout: &ArrayView4<F>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Array4<F>>, Array4<F>, Array1<F>) {
    let (n, c, h, wd) = x.dim();
    let (co, ci, kh, kw) = w.dim();
    let (n2, co2, ho, wo) = dout.dim();
    assert_eq!((n2, co2), (n, co), "conv2d_backward: dout batch/channels");
    let p = ho * wo;
    let ckk = ci * kh * kw;
    let xs = x.as_slice().expect("conv2d_backward: x contiguous");
    let ds = dout.as_slice().expect("conv2d_backward: dout contiguous");
    let wmat = w.to_shape((co, ckk)).expect("conv2d_backward: w reshape");
    let mut db = Array1::<F>::zeros(co);
    let mut dw_mat = Array2::<F>::zeros((co, ckk));
    let mut dx = if need_dx {
        Some(Array4::<F>::zeros((n, c, h, wd)))
    } else {
        None
    };
    let mut col = vec![F::zero(); ckk * p];
    let mut dcol = vec![F::zero(); ckk * p];
    for ni in 0..n {
        let d0 = ni * co * p;
        for coi in 0..co {
            let row = d0 + coi * p;
            db[coi] = db[coi] + ds[row..row + p].iter().copied().sum::<F>();
        }
        if pad > 0 {
            col.fill(F::zero());
        }
        im2col_one(xs, ni * c * h * wd, c, h, wd, kh, kw, stride, pad, ho, wo, &mut col);
        // dw += dout_i @ col_i^T
        unsafe {
            F::gemm(
                co,
                p,
                ckk,
                F::one(),
                ds[d0..].as_ptr(),
                p as isize,
                1,
                col.as_ptr(),
                1,
                p as isize,
                F::one(),
                dw_mat.as_mut_ptr(),
                ckk as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcol_i = w^T @ dout_i, scattered back onto the input planes
            unsafe {
                F::gemm(
                    ckk,
                    co,
                    p,
                    F::one(),
                    wmat.as_ptr(),
                    1,
                    ckk as isize,
                    ds[d0..].as_ptr(),
                    p as isize,
                    1,
                    F::zero(),
                    dcol.as_mut_ptr(),
                    p as isize,
                    1,
                );
            }
            let dxs = dx.as_slice_mut().unwrap();
            col2im_one(&dcol, dxs, ni * c * h * wd, c, h, wd, kh, kw, stride, pad, ho, wo);
        }
    }
    let dw = dw_mat
        .into_shape_with_order((co, ci, kh, kw))
        .expect("conv2d_backward: dw reshape");
    (dx, dw, db)
}

/// Max-pool forward. Returns (out, argmax) where argmax holds, per output
/// element, the flat index into the input H*W plane that won (first-scan
/// tie-break, row-major). Padded positions never win (they compare as -inf).
pub fn maxpool<F: El>(
    x: &ArrayView4<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Array4<F>, Vec<u32>) {
    let (n, c, h, w) = x.dim();
    let ho = out_size(h, k, stride, pad);
    let wo = out_size(w, k, stride, pad);
    let mut out = Array4::<F>::zeros((n, c, ho, wo));
    let mut arg = vec![0u32; n * c * ho * wo];
    let xs = x.as_slice().expect("maxpool: x contiguous");
    let os = out.as_slice_mut().unwrap();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let obase = (ni * c + ci) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0u32;
                    let mut found = false;
                    for i in 0..k {
                        let iy = (oy * stride + i) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..k {
                            let ix = (ox * stride + j) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            let v = xs[base + idx];
                            if !found || v > best {
                                best = v;
                                best_idx = idx as u32;
                                found = true;
                            }
                        }
                    }
                    assert!(found, "maxpool: window entirely in padding");
                    os[obase + oy * wo + ox] = best;
                    arg[obase + oy * wo + ox] = best_idx;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<F: El>(
    dout: &ArrayView4<F>,
    arg: &[u32],
    h: usize,
    w: usize,
) -> Array4<F> {
    let (n, c, ho, wo) = dout.dim();
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    let ds = dout.as_slice().expect("maxpool_backward: dout contiguous");
    let dxs = dx.as_slice_mut().unwrap();
    for nc in 0..n * c {
        let obase = nc * ho * wo;
        let base = nc * h * w;
        for q in 0..ho * wo {
            let idx = arg[obase + q] as usize;
            dxs[base + idx] = dxs[base + idx] + ds[obase + q];
        }
    }
    dx
}

/// Interpolation taps for 2x bilinear upsampling (half-pixel centers,
/// edges clamped): output index -> (lo, hi, weight_hi).
fn up2_taps(len_in: usize) -> Vec<(usize, usize, f64)> {
    let mut taps = Vec::with_capacity(2 * len_in);
    for o in 0..2 * len_in {
        let src = (o as f64 + 0.5) / 2.0 - 0.5;
        if src <= 0.0 {
            taps.push((0, 0, 0.0));
        } else if src >= (len_in - 1) as f64 {
            taps.push((len_in - 1, len_in - 1, 0.0));
        } else {
            let lo = src.floor() as usize;
            taps.push((lo, lo + 1, src - lo as f64));
        }
    }
    taps
}

/// 2x bilinear upsampling, (N,C,H,W) -> (N,C,2H,2W).
pub fn upsample2x<F: El>(x: &ArrayView4<F>) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let ty = up2_taps(h);
    let tx = up2_taps(w);
    let mut out = Array4::<F>::zeros((n, c, 2 * h, 2 * w));
    let xs = x.as_slice().expect("upsample2x: x contiguous");
    let os = out.as_slice_mut().unwrap();
    for nc in 0..n * c {
        let base = nc * h * w;
        let obase = nc * 4 * h * w;
        for (oy, &(ylo, yhi, wy)) in ty.iter().enumerate() {
            let wy = F::from_f64(wy);
            let one_wy = F::one() - wy;
            let row_lo = base + ylo * w;
            let row_hi = base + yhi * w;
            let orow = obase + oy * 2 * w;
            for (ox, &(xlo, xhi, wx)) in tx.iter().enumerate() {
                let wx = F::from_f64(wx);
                let one_wx = F::one() - wx;
                os[orow + ox] = one_wy * (one_wx * xs[row_lo + xlo] + wx * xs[row_lo + xhi])
                    + wy * (one_wx * xs[row_hi + xlo] + wx * xs[row_hi + xhi]);
            }
        }
    }
    out
}

pub fn upsample2x_backward<F: El>(dout: &ArrayView4<F>, h: usize, w: usize) -> Array4<F> {
    let (n, c, oh, ow) = dout.dim();
    assert_eq!((oh, ow), (2 * h, 2 * w));
    let ty = up2_taps(h);
    let tx = up2_taps(w);
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    let ds = dout.as_slice().expect("upsample2x_backward: contiguous");
    let dxs = dx.as_slice_mut().unwrap();
    for nc in 0..n * c {
        let base = nc * h * w;
        let obase = nc * 4 * h * w;
        for (oy, &(ylo, yhi, wy)) in ty.iter().enumerate() {
            let wy = F::from_f64(wy);
            let one_wy = F::one() - wy;
            let orow = obase + oy * 2 * w;
            for (ox, &(xlo, xhi, wx)) in tx.iter().enumerate() {
                let wx = F::from_f64(wx);
                let one_wx = F::one() - wx;
                let g = ds[orow + ox];
                dxs[base + ylo * w + xlo] = dxs[base + ylo * w + xlo] + g * one_wy * one_wx;
                dxs[base + ylo * w + xhi] = dxs[base + ylo * w + xhi] + g * one_wy * wx;
                dxs[base + yhi * w + xlo] = dxs[base + yhi * w + xlo] + g * wy * one_wx;
                dxs[base + yhi * w + xhi] = dxs[base + yhi * w + xhi] + g * wy * wx;
            }
        }
    }
    dx
}

/// Group-norm statistics: per (n, group) mean and reciprocal std.
pub struct NormStats<F> {
    pub mean: Array2<F>,
    pub rstd: Array2<F>,
}

/// Group norm forward. gamma/beta are per-channel. groups must divide C.
pub fn group_norm<F: El>(
    x: &ArrayView4<F>,
    gamma: &ArrayView1<F>,
    beta: &ArrayView1<F>,
    groups: usize,
    eps: f64,
) -> (Array4<F>, NormStats<F>) {
    let (n, c, h, w) = x.dim();
    assert!(groups >= 1 && c % groups == 0, "group_norm: groups {groups} for {c} channels");
    let cg = c / groups;
    let m = cg * h * w;
    let mf = F::from_f64(m as f64);
    let mut out = Array4::<F>::zeros((n, c, h, w));
    let mut mean = Array2::<F>::zeros((n, groups));
    let mut rstd = Array2::<F>::zeros((n, groups));
    let xs = x.as_slice().expect("group_norm: x contiguous");
    let os = out.as_slice_mut().unwrap();
    let plane = h * w;
    for ni in 0..n {
        for g in 0..groups {
            let start = (ni * c + g * cg) * plane;
            let seg = &xs[start..start + m];
            let mu: F = seg.iter().copied().sum::<F>() / mf;
            let var: F = seg.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() / mf;
            let rs = F::one() / (var + F::from_f64(eps)).sqrt();
            mean[(ni, g)] = mu;
            rstd[(ni, g)] = rs;
            for cc in 0..cg {
                let ch = g * cg + cc;
                let ga = gamma[ch];
                let be = beta[ch];
                let off = start + cc * plane;
                for q in 0..plane {
                    os[off + q] = (xs[off + q] - mu) * rs * ga + be;
                }
            }
        }
    }
    (out, NormStats { mean, rstd })
}

/// Group norm backward: returns (dx, dgamma, dbeta).
pub fn group_norm_backward<F: El>(
    x: &ArrayView4<F>,
    gamma: &ArrayView1<F>,
    stats: &NormStats<F>,
    groups: usize,
    dout: &ArrayView4<F>,
) -> (Array4<F>, Array1<F>, Array1<F>) {
    let (n, c, h, w) = x.dim();
    let cg = c / groups;
    let plane = h * w;
    let m = cg * plane;
    let mf = F::from_f64(m as f64);
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    let mut dgamma = Array1::<F>::zeros(c);
    let mut dbeta = Array1::<F>::zeros(c);
    let xs = x.as_slice().unwrap();
    let ds = dout.as_slice().expect("group_norm_backward: dout contiguous");
    let dxs = dx.as_slice_mut().unwrap();
    for ni in 0..n {
        for g in 0..groups {
            let mu = stats.mean[(ni, g)];
            let rs = stats.rstd[(ni, g)];
            let start = (ni * c + g * cg) * plane;
            // two reductions over the group: sum(dxhat), sum(dxhat * xhat)
            let mut sum_dxh = F::zero();
            let mut sum_dxh_xh = F::zero();
            for cc in 0..cg {
                let ch = g * cg + cc;
                let ga = gamma[ch];
                let off = start + cc * plane;
                let mut dg = F::zero();
                let mut db = F::zero();
                for q in 0..plane {
                    let xh = (xs[off + q] - mu) * rs;
                    let dy = ds[off + q];
                    let dxh = dy * ga;
                    sum_dxh = sum_dxh + dxh;
                    sum_dxh_xh = sum_dxh_xh + dxh * xh;
                    dg = dg + dy * xh;
                    db = db + dy;
                }
                dgamma[ch] = dgamma[ch] + dg;
                dbeta[ch] = dbeta[ch] + db;
            }
            for cc in 0..cg {
                let ch = g * cg + cc;
                let ga = gamma[ch];
                let off = start + cc * plane;
                for q in 0..plane {
                    let xh = (xs[off + q] - mu) * rs;
                    let dxh = ds[off + q] * ga;
                    dxs[off + q] = rs * (dxh - (sum_dxh + xh * sum_dxh_xh) / mf);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Batch norm (training mode) forward over (N,H,W) per channel.
/// Returns output plus the batch statistics used (mean/rstd per channel as
/// 1-row matrices so the cache type is shared with group norm) and the
/// biased batch variance for running-average updates.
pub fn batch_norm_train<F: El>(
    x: &ArrayView4<F>,
    gamma: &ArrayView1<F>,
    beta: &ArrayView1<F>,
    eps: f64,
) -> (Array4<F>, NormStats<F>, Array1<F>) {
    let (n, c, h, w) = x.dim();
    let plane = h * w;
    let m = n * plane;
    let mf = F::from_f64(m as f64);
    let mut out = Array4::<F>::zeros((n, c, h, w));
    let mut mean = Array2::<F>::zeros((1, c));
    let mut rstd = Array2::<F>::zeros((1, c));
    let mut var_out = Array1::<F>::zeros(c);
    let xs = x.as_slice().unwrap();
    let os = out.as_slice_mut().unwrap();
    for ch in 0..c {
        let mut s = F::zero();
        for ni in 0..n {
            let off = (ni * c + ch) * plane;
            s = s + xs[off..off + plane].iter().copied().sum::<F>();
        }
        let mu = s / mf;
        let mut v = F::zero();
        for ni in 0..n {
            let off = (ni * c + ch) * plane;
            v = v + xs[off..off + plane]
                .iter()
                .map(|&x| (x - mu) * (x - mu))
                .sum::<F>();
        }
        let var = v / mf;
        let rs = F::one() / (var + F::from_f64(eps)).sqrt();
        mean[(0, ch)] = mu;
        rstd[(0, ch)] = rs;
        var_out[ch] = var;
        let ga = gamma[ch];
        let be = beta[ch];
        for ni in 0..n {
            let off = (ni * c + ch) * plane;
            for q in 0..plane {
                os[off + q] = (xs[off + q] - mu) * rs * ga + be;
            }
        }
    }
    (out, NormStats { mean, rstd }, var_out)
}

/// Batch norm (training mode) backward.
pub fn batch_norm_train_backward<F: El>(
    x: &ArrayView4<F>,
    gamma: &ArrayView1<F>,
    stats: &NormStats<F>,
    dout: &ArrayView4<F>,
) -> (Array4<F>, Array1<F>, Array1<F>) {
    let (n, c, h, w) = x.dim();
    let plane = h * w;
    let m = n * plane;
    let mf = F::from_f64(m as f64);
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    let mut dgamma = Array1::<F>::zeros(c);
    let mut dbeta = Array1::<F>::zeros(c);
    let xs = x.as_slice().unwrap();
    let ds = dout.as_slice().unwrap();
    let dxs = dx.as_slice_mut().unwrap();
    for ch in 0..c {
        let mu = stats.mean[(0, ch)];
        let rs = stats.rstd[(0, ch)];
        let ga = gamma[ch];
        let mut sum_dxh = F::zero();
        let mut sum_dxh_xh = F::zero();
        let mut dg = F::zero();
        let mut db = F::zero();
        for ni in 0..n {
            let off = (ni * c + ch) * plane;
            for q in 0..plane {
                let xh = (xs[off + q] - mu) * rs;
                let dy = ds[off + q];
                let dxh = dy * ga;
                sum_dxh = sum_dxh + dxh;
                sum_dxh_xh = sum_dxh_xh + dxh * xh;
                dg = dg + dy * xh;
                db = db + dy;
            }
        }
        dgamma[ch] = dg;
        dbeta[ch] = db;
        for ni in 0..n {
            let off = (ni * c + ch) * plane;
            for q in 0..plane {
                let xh = (xs[off + q] - mu) * rs;
                let dxh = ds[off + q] * ga;
                dxs[off + q] = rs * (dxh - (sum_dxh + xh * sum_dxh_xh) / mf);
            }
        }
    }
    (dx, dgamma, dbeta)
}
