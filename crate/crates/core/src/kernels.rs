//! Computational kernels behind the tape ops. Convolution and affine layers
//! lower onto GEMM; everything else is a straightforward loop. All kernels
//! are layout-explicit: tensors are dense row-major.

use crate::scalar::Scalar;

/// Output spatial size of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Expand one sample's [C,H,W] block into columns of shape
/// [C*K*K, H_out*W_out], row index (c*K+u)*K+v, column index i*W_out+j.
/// Out-of-bounds taps read zero. The destination rows live at
/// `row * row_stride + col_base` so several samples can share one
/// whole-batch column matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col<S: Scalar>(
    x: &[S],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    cols: &mut [S],
    row_stride: usize,
    col_base: usize,
) {
    let h_out = conv_out_dim(h, k, stride, pad);
    let w_out = conv_out_dim(w, k, stride, pad);
    let n_cols = h_out * w_out;
    debug_assert!(row_stride >= n_cols);
    for c in 0..c_in {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let row = ((c * k + u) * k + v) * row_stride + col_base;
                for i in 0..h_out {
                    let src_i = (i * stride + u) as isize - pad as isize;
                    let dst = row + i * w_out;
                    if src_i < 0 || src_i >= h as isize {
                        cols[dst..dst + w_out].fill(S::ZERO);
                        continue;
                    }
                    let src_row = src_i as usize * w;
                    if stride == 1 {
                        // src_j = j + v - pad is a contiguous span; copy the
                        // in-bounds middle and zero-fill the edges
                        let off = v as isize - pad as isize;
                        let j_lo = (-off).max(0) as usize;
                        let j_hi = ((w as isize - off).max(0) as usize).min(w_out);
                        cols[dst..dst + j_lo.min(w_out)].fill(S::ZERO);
                        if j_lo < j_hi {
                            let s0 = (j_lo as isize + off) as usize;
                            cols[dst + j_lo..dst + j_hi]
                                .copy_from_slice(&plane[src_row + s0..src_row + s0 + (j_hi - j_lo)]);
                        }
                        cols[dst + j_hi.max(j_lo).min(w_out)..dst + w_out].fill(S::ZERO);
                    } else {
                        for j in 0..w_out {
                            let src_j = (j * stride + v) as isize - pad as isize;
                            cols[dst + j] = if src_j < 0 || src_j >= w as isize {
                                S::ZERO
                            } else {
                                plane[src_row + src_j as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the column gradient back into one sample's [C,H,W] block.
/// Inverse of `im2col` up to summation over overlapping taps; reads rows
/// at the same strided layout `im2col` writes.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<S: Scalar>(
    cols: &[S],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dx: &mut [S],
    row_stride: usize,
    col_base: usize,
) {
    let h_out = conv_out_dim(h, k, stride, pad);
    let w_out = conv_out_dim(w, k, stride, pad);
    let n_cols = h_out * w_out;
    debug_assert!(row_stride >= n_cols);
    for c in 0..c_in {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let row = ((c * k + u) * k + v) * row_stride + col_base;
                for i in 0..h_out {
                    let src_i = (i * stride + u) as isize - pad as isize;
                    if src_i < 0 || src_i >= h as isize {
                        continue;
                    }
                    let dst_row = src_i as usize * w;
                    if stride == 1 {
                        let off = v as isize - pad as isize;
                        let j_lo = (-off).max(0) as usize;
                        let j_hi = ((w as isize - off).max(0) as usize).min(w_out);
                        if j_lo < j_hi {
                            let s0 = (j_lo as isize + off) as usize;
                            let dst = &mut plane[dst_row + s0..dst_row + s0 + (j_hi - j_lo)];
                            let src = &cols[row + i * w_out + j_lo..row + i * w_out + j_hi];
                            for (d, s) in dst.iter_mut().zip(src.iter()) {
                                *d += *s;
                            }
                        }
                    } else {
                        for j in 0..w_out {
                            let src_j = (j * stride + v) as isize - pad as isize;
                            if src_j < 0 || src_j >= w as isize {
                                continue;
                            }
                            plane[dst_row + src_j as usize] += cols[row + i * w_out + j];
                        }
                    }
                }
            }
        }
    }
}

/// Dimensions shared by the conv kernels.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn h_out(&self) -> usize {
        conv_out_dim(self.h, self.k, self.stride, self.pad)
    }
    pub fn w_out(&self) -> usize {
        conv_out_dim(self.w, self.k, self.stride, self.pad)
    }
    pub fn n_cols(&self) -> usize {
        self.h_out() * self.w_out()
    }
    pub fn kk(&self) -> usize {
        self.c_in * self.k * self.k
    }

    /// Samples per GEMM block, sized so the column matrix stays cache
    /// resident (the column matrix is k*k times the activation, so
    /// streaming it from memory dominates everything else).
    pub fn chunk<S>(&self) -> usize {
        const COLS_BUDGET_BYTES: usize = 4 * 1024 * 1024;
        let per_sample = self.kk() * self.n_cols() * core::mem::size_of::<S>();
        (COLS_BUDGET_BYTES / per_sample.max(1)).clamp(1, self.n)
    }

    /// Columns of one chunk's column matrix.
    pub fn chunk_width<S>(&self) -> usize {
        self.chunk::<S>() * self.n_cols()
    }
}

fn build_cols_chunk<S: Scalar>(x: &[S], d: ConvDims, s0: usize, count: usize, cols: &mut [S]) {
    let n_cols = d.n_cols();
    for t in 0..count {
        im2col(
            &x[(s0 + t) * d.c_in * d.h * d.w..],
            d.c_in,
            d.h,
            d.w,
            d.k,
            d.stride,
            d.pad,
            cols,
            count * n_cols,
            t * n_cols,
        );
    }
}

/// Cross-correlation forward, cache-blocked over sample chunks: per
/// chunk, an im2col into the (cache-resident) column matrix, one GEMM,
/// and a bias-adding permute into y: [N,Cout,H',W']. Returns false if any
/// output element is non-finite. `cols` and `y_perm` are chunk-sized
/// scratch (`d.chunk_width()` columns).
pub fn conv2d_forward<S: Scalar>(
    x: &[S],
    weight: &[S],
    bias: &[S],
    d: ConvDims,
    cols: &mut [S],
    y_perm: &mut [S],
    y: &mut [S],
) -> bool {
    let n_cols = d.n_cols();
    let chunk = d.chunk::<S>();
    let mut finite = true;
    let mut s0 = 0usize;
    while s0 < d.n {
        let count = chunk.min(d.n - s0);
        let width = count * n_cols;
        build_cols_chunk(x, d, s0, count, &mut cols[..d.kk() * width]);
        unsafe {
            S::gemm(
                d.c_out,
                d.kk(),
                width,
                S::ONE,
                weight.as_ptr(),
                d.kk() as isize,
                1,
                cols.as_ptr(),
                width as isize,
                1,
                S::ZERO,
                y_perm.as_mut_ptr(),
                width as isize,
                1,
            );
        }
        for co in 0..d.c_out {
            let b = bias[co];
            for t in 0..count {
                let s = s0 + t;
                let src = &y_perm[co * width + t * n_cols..co * width + (t + 1) * n_cols];
                let dst = &mut y[(s * d.c_out + co) * n_cols..(s * d.c_out + co + 1) * n_cols];
                for (dv, v) in dst.iter_mut().zip(src.iter()) {
                    let out = *v + b;
                    finite &= out.is_finite();
                    *dv = out;
                }
            }
        }
        s0 += count;
    }
    finite
}

/// Backward pass, cache-blocked like the forward pass (the column matrix
/// is rebuilt per chunk, which is cheaper than streaming a stored copy
/// from memory). Accumulates into dw/db always and into dx when present
/// (skipped for leaf inputs that need no gradient). `cols`, `dy_perm` and
/// `dcols` are chunk-sized scratch.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    weight: &[S],
    d: ConvDims,
    dy: &[S],
    mut dx: Option<&mut [S]>,
    dw: &mut [S],
    db: &mut [S],
    cols: &mut [S],
    dy_perm: &mut [S],
    dcols: &mut [S],
) {
    let n_cols = d.n_cols();
    let kk = d.kk();
    let chunk = d.chunk::<S>();
    let mut s0 = 0usize;
    while s0 < d.n {
        let count = chunk.min(d.n - s0);
        let width = count * n_cols;
        for t in 0..count {
            let s = s0 + t;
            for co in 0..d.c_out {
                let src = &dy[(s * d.c_out + co) * n_cols..(s * d.c_out + co + 1) * n_cols];
                dy_perm[co * width + t * n_cols..co * width + (t + 1) * n_cols]
                    .copy_from_slice(src);
            }
        }
        for co in 0..d.c_out {
            let mut acc = S::ZERO;
            for v in &dy_perm[co * width..(co + 1) * width] {
                acc += *v;
            }
            db[co] += acc;
        }
        build_cols_chunk(x, d, s0, count, &mut cols[..kk * width]);
        // dW += dy_perm [Cout, width] x cols^T [width, kk]
        unsafe {
            S::gemm(
                d.c_out,
                width,
                kk,
                S::ONE,
                dy_perm.as_ptr(),
                width as isize,
                1,
                cols.as_ptr(),
                1,
                width as isize,
                S::ONE,
                dw.as_mut_ptr(),
                kk as isize,
                1,
            );
        }
        // dX: dcols = W^T [kk, Cout] x dy_perm, scattered back per sample
        if let Some(dx) = dx.as_deref_mut() {
            unsafe {
                S::gemm(
                    kk,
                    d.c_out,
                    width,
                    S::ONE,
                    weight.as_ptr(),
                    1,
                    kk as isize,
                    dy_perm.as_ptr(),
                    width as isize,
                    1,
                    S::ZERO,
                    dcols.as_mut_ptr(),
                    width as isize,
                    1,
                );
            }
            for t in 0..count {
                let s = s0 + t;
                col2im_add(
                    dcols,
                    d.c_in,
                    d.h,
                    d.w,
                    d.k,
                    d.stride,
                    d.pad,
                    &mut dx[s * d.c_in * d.h * d.w..(s + 1) * d.c_in * d.h * d.w],
                    width,
                    t * n_cols,
                );
            }
        }
        s0 += count;
    }
}

/// Convenience wrapper with local scratch (tests and small callers).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_simple<S: Scalar>(
    x: &[S],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[S],
    bias: &[S],
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    y: &mut [S],
) {
    let d = ConvDims {
        n,
        c_in,
        h,
        w,
        c_out,
        k,
        stride,
        pad,
    };
    let mut cols = vec![S::ZERO; d.kk() * d.chunk_width::<S>()];
    let mut y_perm = vec![S::ZERO; c_out * d.chunk_width::<S>()];
    conv2d_forward(x, weight, bias, d, &mut cols, &mut y_perm, y);
}

/// y[N,Dout] = x[N,Din] * W^T + b, with W stored [Dout,Din].
pub fn affine_forward<S: Scalar>(
    x: &[S],
    n: usize,
    d_in: usize,
    weight: &[S],
    bias: &[S],
    d_out: usize,
    y: &mut [S],
) {
    unsafe {
        S::gemm(
            n,
            d_in,
            d_out,
            S::ONE,
            x.as_ptr(),
            d_in as isize,
            1,
            weight.as_ptr(),
            1,
            d_in as isize,
            S::ZERO,
            y.as_mut_ptr(),
            d_out as isize,
            1,
        );
    }
    for r in 0..n {
        for (c, b) in bias.iter().enumerate() {
            y[r * d_out + c] += *b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn affine_backward<S: Scalar>(
    x: &[S],
    n: usize,
    d_in: usize,
    weight: &[S],
    d_out: usize,
    dy: &[S],
    dx: Option<&mut [S]>,
    dw: &mut [S],
    db: &mut [S],
) {
    // dW += dy^T [Dout,N] x x [N,Din]
    unsafe {
        S::gemm(
            d_out,
            n,
            d_in,
            S::ONE,
            dy.as_ptr(),
            1,
            d_out as isize,
            x.as_ptr(),
            d_in as isize,
            1,
            S::ONE,
            dw.as_mut_ptr(),
            d_in as isize,
            1,
        );
    }
    for r in 0..n {
        for c in 0..d_out {
            db[c] += dy[r * d_out + c];
        }
    }
    if let Some(dx) = dx {
        // dx += dy [N,Dout] x W [Dout,Din]
        unsafe {
            S::gemm(
                n,
                d_out,
                d_in,
                S::ONE,
                dy.as_ptr(),
                d_out as isize,
                1,
                weight.as_ptr(),
                d_in as isize,
                1,
                S::ONE,
                dx.as_mut_ptr(),
                d_in as isize,
                1,
            );
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::ZERO {
        S::ONE / (S::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::ONE + e)
    }
}

/// Per-channel spatial softmax over the H*W positions of [N,C,H,W],
/// with the activations divided by `temperature` before exponentiation.
/// Max-subtracted for stability; exact up to accumulation error.
pub fn spatial_softmax_forward<S: Scalar>(
    h: &[S],
    n: usize,
    c: usize,
    hw: usize,
    temperature: S,
    z: &mut [S],
) {
    for g in 0..n * c {
        let src = &h[g * hw..(g + 1) * hw];
        let dst = &mut z[g * hw..(g + 1) * hw];
        let mut m = src[0];
        for v in src.iter() {
            m = m.maxs(*v);
        }
        let mut sum = S::ZERO;
        for (d, v) in dst.iter_mut().zip(src.iter()) {
            let e = ((*v - m) / temperature).exp();
            *d = e;
            sum += e;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
}

/// Four-lane unrolled sum; reductions are latency-bound otherwise.
pub fn fast_sum<S: Scalar>(xs: &[S]) -> S {
    let mut acc = [S::ZERO; 4];
    let chunks = xs.chunks_exact(4);
    let rem = chunks.remainder();
    for c in chunks {
        acc[0] += c[0];
        acc[1] += c[1];
        acc[2] += c[2];
        acc[3] += c[3];
    }
    let mut tail = S::ZERO;
    for v in rem {
        tail += *v;
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// VJP of the spatial softmax: dh = z * (dz - sum(dz * z)) / T per group.
/// Writes when `accumulate` is false (fresh gradient slot), adds
/// otherwise.
#[allow(clippy::too_many_arguments)]
pub fn spatial_softmax_backward<S: Scalar>(
    z: &[S],
    n: usize,
    c: usize,
    hw: usize,
    temperature: S,
    dz: &[S],
    dh: &mut [S],
    accumulate: bool,
) {
    for g in 0..n * c {
        let zs = &z[g * hw..(g + 1) * hw];
        let dzs = &dz[g * hw..(g + 1) * hw];
        let out = &mut dh[g * hw..(g + 1) * hw];
        let mut dot = [S::ZERO; 4];
        let mut i = 0;
        while i + 4 <= hw {
            dot[0] += zs[i] * dzs[i];
            dot[1] += zs[i + 1] * dzs[i + 1];
            dot[2] += zs[i + 2] * dzs[i + 2];
            dot[3] += zs[i + 3] * dzs[i + 3];
            i += 4;
        }
        let mut dot = dot[0] + dot[1] + dot[2] + dot[3];
        while i < hw {
            dot += zs[i] * dzs[i];
            i += 1;
        }
        if accumulate {
            for ((o, zv), dv) in out.iter_mut().zip(zs.iter()).zip(dzs.iter()) {
                *o += *zv * (*dv - dot) / temperature;
            }
        } else {
            for ((o, zv), dv) in out.iter_mut().zip(zs.iter()).zip(dzs.iter()) {
                *o = *zv * (*dv - dot) / temperature;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent reference convolution: direct quadruple loop over the
    // definition, no im2col, no GEMM.
    #[allow(clippy::too_many_arguments)]
    fn naive_conv(
        x: &[f64],
        n: usize,
        c_in: usize,
        h: usize,
        w: usize,
        wt: &[f64],
        b: &[f64],
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let ho = conv_out_dim(h, k, stride, pad);
        let wo = conv_out_dim(w, k, stride, pad);
        let mut y = vec![0.0; n * c_out * ho * wo];
        for s in 0..n {
            for co in 0..c_out {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..c_in {
                            for u in 0..k {
                                for v in 0..k {
                                    let ii = (i * stride + u) as isize - pad as isize;
                                    let jj = (j * stride + v) as isize - pad as isize;
                                    if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                        continue;
                                    }
                                    acc += x[((s * c_in + ci) * h + ii as usize) * w
                                        + jj as usize]
                                        * wt[((co * c_in + ci) * k + u) * k + v];
                                }
                            }
                        }
                        y[((s * c_out + co) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_reference_on_random_shapes() {
        let mut rng = crate::rng::Rng::new(42);
        for _ in 0..30 {
            let n = 1 + rng.below(2);
            let c_in = 1 + rng.below(3);
            let c_out = 1 + rng.below(3);
            let k = 1 + rng.below(3);
            let stride = 1 + rng.below(2);
            let pad = rng.below(2);
            let h = k + rng.below(5);
            let w = k + rng.below(5);
            let x: Vec<f64> = (0..n * c_in * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let wt: Vec<f64> = (0..c_out * c_in * k * k)
                .map(|_| rng.uniform(-1.0, 1.0))
                .collect();
            let b: Vec<f64> = (0..c_out).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let ho = conv_out_dim(h, k, stride, pad);
            let wo = conv_out_dim(w, k, stride, pad);
            let mut y = vec![0.0; n * c_out * ho * wo];
            conv2d_simple(&x, n, c_in, h, w, &wt, &b, c_out, k, stride, pad, &mut y);
            let want = naive_conv(&x, n, c_in, h, w, &wt, &b, c_out, k, stride, pad);
            for (a, e) in y.iter().zip(want.iter()) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_sum_kernel_totals_the_window() {
        // 3x3 input 1..9 with an all-ones 3x3 kernel collapses to the sum.
        let x: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let wt = vec![1.0; 9];
        let mut y = vec![0.0; 1];
        conv2d_simple(&x, 1, 1, 3, 3, &wt, &[0.0], 1, 3, 1, 0, &mut y);
        let direct: f64 = x.iter().sum(); // oracle: sum over the 9 products
        assert_eq!(direct, 45.0);
        assert!((y[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn conv_1x1_kernel_scales_elementwise() {
        let x: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let mut y = vec![0.0; 9];
        conv2d_simple(&x, 1, 1, 3, 3, &[2.0], &[0.0], 1, 1, 1, 0, &mut y);
        for (a, e) in y.iter().zip(x.iter()) {
            assert_eq!(*a, 2.0 * e);
        }
    }

    #[test]
    fn conv_zero_input_zero_output() {
        let x = vec![0.0f32; 9];
        let wt = vec![0.7f32; 9];
        let mut y = vec![1.0f32; 9];
        conv2d_simple(&x, 1, 1, 3, 3, &wt, &[0.0], 1, 3, 1, 1, &mut y);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_shape_formula_exhaustive_small_sweep() {
        for h in 1..=8usize {
            for w in 1..=8usize {
                for k in 1..=3usize.min(h).min(w) {
                    for stride in 1..=2usize {
                        for pad in 0..=1usize {
                            let ho = conv_out_dim(h, k, stride, pad);
                            let wo = conv_out_dim(w, k, stride, pad);
                            assert_eq!(ho, (h + 2 * pad - k) / stride + 1);
                            assert_eq!(wo, (w + 2 * pad - k) / stride + 1);
                            // im2col/forward agree with the formula.
                            let x = vec![1.0f32; h * w];
                            let wt = vec![1.0f32; k * k];
                            let mut y = vec![0.0f32; ho * wo];
                            conv2d_simple(&x, 1, 1, h, w, &wt, &[0.0], 1, k, stride, pad, &mut y);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn affine_hand_example() {
        // x=[1,2], W=[[1,1],[1,-1]], b=[0,0] -> [3,-1]
        let x = vec![1.0f64, 2.0];
        let w = vec![1.0, 1.0, 1.0, -1.0];
        let mut y = vec![0.0; 2];
        affine_forward(&x, 1, 2, &w, &[0.0, 0.0], 2, &mut y);
        assert_eq!(y, vec![3.0, -1.0]);
    }

    #[test]
    fn sigmoid_stable_both_branches() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(800.0f64).is_finite());
        assert!(sigmoid(-800.0f64).is_finite());
        assert!((sigmoid(3.0f64) + sigmoid(-3.0f64) - 1.0).abs() < 1e-15);
    }
}
