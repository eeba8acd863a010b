//! Raw numeric kernels behind the autodiff graph: matrix products, im2col
//! convolution, pointwise activations, row softmax/layernorm, and fused
//! multi-head attention. Forward kernels here are also what the loop-oracle
//! tests compare against.
//!
//! Parallel sites only ever split work along an output dimension into fixed
//! chunks; no floating-point sum is ever reduced across threads, so every
//! kernel is bit-deterministic regardless of execution mode.

use super::{Scalar, Tensor};
use crate::par;

/// Additive mask value for attention logits. Large enough that exp()
/// underflows to exactly 0 after max-subtraction, which is what makes the
/// causality guarantees bit-exact rather than approximate.
pub const MASKED: f64 = -1.0e9;

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// Rows of C per parallel chunk. Fixed so the partition (and therefore the
/// result) does not depend on the thread count.
const GEMM_CHUNK_ROWS: usize = 128;

/// C(m x n) = A(m x k) . B, with B given row-major as k x n
/// (`trans_b = false`) or n x k (`trans_b = true`).
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, trans_b: bool) -> Tensor<S> {
    assert_eq!(a.shape().len(), 2, "matmul: a must be 2-d, got {:?}", a.shape());
    assert_eq!(b.shape().len(), 2, "matmul: b must be 2-d, got {:?}", b.shape());
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (bk, n) = if trans_b {
        (b.shape()[1], b.shape()[0])
    } else {
        (b.shape()[0], b.shape()[1])
    };
    assert_eq!(
        k,
        bk,
        "matmul: a shape {:?} incompatible with b shape {:?}{}",
        a.shape(),
        b.shape(),
        if trans_b { " (transposed)" } else { "" }
    );
    let mut c = Tensor::zeros(&[m, n]);
    let (rsb, csb) = if trans_b { (1isize, k as isize) } else { (n as isize, 1) };
    gemm_chunked(
        m,
        k,
        n,
        a.data(),
        k as isize,
        1,
        b.data(),
        rsb,
        csb,
        S::ZERO,
        c.data_mut(),
    );
    c
}

/// C(k x n) = Aᵀ . B for A stored row-major m x k and B row-major m x n.
pub fn matmul_ta<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (bm, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(
        m,
        bm,
        "matmul_ta: a shape {:?} (transposed) incompatible with b shape {:?}",
        a.shape(),
        b.shape()
    );
    let mut c = Tensor::zeros(&[k, n]);
    gemm_chunked(
        k,
        m,
        n,
        a.data(),
        1,
        k as isize,
        b.data(),
        n as isize,
        1,
        S::ZERO,
        c.data_mut(),
    );
    c
}

/// Strided gemm into `c` (row-major m x n), parallel over fixed row chunks.
#[allow(clippy::too_many_arguments)]
pub fn gemm_chunked<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    rsa: isize,
    csa: isize,
    b: &[S],
    rsb: isize,
    csb: isize,
    beta: S,
    c: &mut [S],
) {
    assert_eq!(c.len(), m * n);
    let a_ptr = a.as_ptr() as usize;
    let b_ptr = b.as_ptr() as usize;
    par::for_chunks_mut(c, GEMM_CHUNK_ROWS * n, |chunk_idx, c_chunk| {
        let row0 = chunk_idx * GEMM_CHUNK_ROWS;
        let rows = c_chunk.len() / n;
        unsafe {
            S::gemm(
                rows,
                k,
                n,
                S::ONE,
                (a_ptr as *const S).offset(row0 as isize * rsa),
                rsa,
                csa,
                b_ptr as *const S,
                rsb,
                csb,
                beta,
                c_chunk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, no kernel flip)
// ---------------------------------------------------------------------------

pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= kernel,
        "conv2d: kernel extent {kernel} exceeds padded input {input}+2*{pad}"
    );
    (input + 2 * pad - kernel) / stride + 1
}

/// im2col for one image: out is (oh*ow) x (c*kh*kw), row per output site.
#[allow(clippy::too_many_arguments)]
fn im2col_image<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [S],
) {
    let patch = c * kh * kw;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * patch;
            for ci in 0..c {
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let dst = row + (ci * kh + ky) * kw + kx;
                        cols[dst] = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w
                        {
                            x[(ci * h + iy as usize) * w + ix as usize]
                        } else {
                            S::ZERO
                        };
                    }
                }
            }
        }
    }
}

/// Batched 2-d cross-correlation of x [b, c, h, w] with weights
/// [oc, c, kh, kw]. Returns the output [b, oc, oh, ow] and the im2col
/// buffer [b * oh * ow, c * kh * kw] saved for the backward pass.
pub fn conv2d_fwd<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> (Tensor<S>, Tensor<S>) {
    assert!(stride > 0, "conv2d: stride must be positive");
    assert_eq!(x.shape().len(), 4, "conv2d: input must be [b,c,h,w], got {:?}", x.shape());
    assert_eq!(
        weight.shape().len(),
        4,
        "conv2d: weight must be [oc,c,kh,kw], got {:?}",
        weight.shape()
    );
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oc, wc, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    assert_eq!(
        c, wc,
        "conv2d: input channels {c} != weight channels {wc} (input {:?}, weight {:?})",
        x.shape(),
        weight.shape()
    );
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    let patch = c * kh * kw;
    let sites = oh * ow;

    let mut cols = Tensor::zeros(&[b * sites, patch]);
    let x_data = x.data();

    // im2col per image in parallel (disjoint cols slices)...
    par::for_chunks_mut(cols.data_mut(), sites * patch, |bi, cols_img| {
        im2col_image(
            &x_data[bi * c * h * w..(bi + 1) * c * h * w],
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            cols_img,
        );
    });

    // ...then one channel-last gemm over the whole batch and a small
    // per-image transpose back to [oc, sites].
    let mut out_cl = Tensor::zeros(&[b * sites, oc]);
    gemm_chunked(
        b * sites,
        patch,
        oc,
        cols.data(),
        patch as isize,
        1,
        weight.data(),
        1,
        patch as isize,
        S::ZERO,
        out_cl.data_mut(),
    );
    let mut out = Tensor::zeros(&[b, oc, oh, ow]);
    let cl = out_cl.data();
    par::for_chunks_mut(out.data_mut(), oc * sites, |bi, out_img| {
        let base = bi * sites * oc;
        for o in 0..oc {
            for s in 0..sites {
                out_img[o * sites + s] = cl[base + s * oc + o];
            }
        }
    });
    (out, cols)
}

/// Backward of conv2d. `dout` is [b, oc, oh, ow]; returns (dx, dweight).
pub fn conv2d_bwd<S: Scalar>(
    x_shape: &[usize],
    weight: &Tensor<S>,
    cols: &Tensor<S>,
    dout: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> (Tensor<S>, Tensor<S>) {
    let (b, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (oc, _, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let (oh, ow) = (dout.shape()[2], dout.shape()[3]);
    let patch = c * kh * kw;
    let sites = oh * ow;

    // Channel-last view of dout, then the batch-wide gemms.
    let mut dout_cl = Tensor::zeros(&[b * sites, oc]);
    {
        let src = dout.data();
        par::for_chunks_mut(dout_cl.data_mut(), sites * oc, |bi, cl_img| {
            let base = bi * oc * sites;
            for s in 0..sites {
                for o in 0..oc {
                    cl_img[s * oc + o] = src[base + o * sites + s];
                }
            }
        });
    }

    // dW = dout_clᵀ(oc x b*sites) . cols(b*sites x patch), one gemm with a
    // fixed accumulation order.
    let mut dw = Tensor::zeros(weight.shape());
    gemm_chunked(
        oc,
        b * sites,
        patch,
        dout_cl.data(),
        1,
        oc as isize,
        cols.data(),
        patch as isize,
        1,
        S::ZERO,
        dw.data_mut(),
    );

    // dcols = dout_cl(b*sites x oc) . W(oc x patch), then col2im per image.
    let mut dcols = Tensor::zeros(&[b * sites, patch]);
    gemm_chunked(
        b * sites,
        oc,
        patch,
        dout_cl.data(),
        oc as isize,
        1,
        weight.data(),
        patch as isize,
        1,
        S::ZERO,
        dcols.data_mut(),
    );

    let mut dx = Tensor::zeros(x_shape);
    let dcols_all = dcols.data();
    par::for_chunks_mut(dx.data_mut(), c * h * w, |bi, dx_img| {
        let dcols = &dcols_all[bi * sites * patch..(bi + 1) * sites * patch];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (oy * ow + ox) * patch;
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            dx_img[(ci * h + iy as usize) * w + ix as usize] +=
                                dcols[row + (ci * kh + ky) * kw + kx];
                        }
                    }
                }
            }
        }
    });
    (dx, dw)
}

// ---------------------------------------------------------------------------
// pointwise
// ---------------------------------------------------------------------------

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v.maximum(S::ZERO))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Gaussian error linear unit, tanh approximation.
pub fn gelu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    x.map(|v| {
        let u = c * (v + a * v * v * v);
        half * v * (S::ONE + u.tanh())
    })
}

pub fn gelu_grad_at<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = S::ONE - t * t;
    half * (S::ONE + t) + half * x * sech2 * c * (S::ONE + three * a * x * x)
}

/// Softmax over the last dimension, numerically stabilized by row-max
/// subtraction. Masked logits at [`MASKED`] underflow to exactly zero.
pub fn softmax_rows<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    assert!(
        x.cols() >= 1,
        "softmax: last dim must be >= 1, got shape {:?}",
        x.shape()
    );
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols) {
        softmax_row_in_place(row);
    }
    out
}

#[inline]
pub fn softmax_row_in_place<S: Scalar>(row: &mut [S]) {
    let mut max = row[0];
    for &v in row.iter() {
        max = max.maximum(v);
    }
    let mut sum = S::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = S::ONE / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Normalize each row to mean 0, variance 1 (epsilon inside the square
/// root). Returns the normalized rows and the per-row 1/sqrt(var + eps)
/// needed by the backward pass.
pub fn layernorm_rows<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<S>) {
    assert!(
        x.cols() >= 1,
        "layernorm: last dim must be >= 1, got shape {:?}",
        x.shape()
    );
    let cols = x.cols();
    let inv_n = S::from_f64(1.0 / cols as f64);
    let eps = S::from_f64(LAYERNORM_EPS);
    let mut out = x.clone();
    let mut rstds = Vec::with_capacity(out.rows());
    for row in out.data_mut().chunks_mut(cols) {
        let mean = row.iter().copied().sum::<S>() * inv_n;
        let mut var = S::ZERO;
        for v in row.iter() {
            let d = *v - mean;
            var += d * d;
        }
        var *= inv_n;
        let rstd = S::ONE / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * rstd;
        }
        rstds.push(rstd);
    }
    (out, rstds)
}

/// dx for a pure layernorm given the normalized output and per-row rstd:
/// dx = rstd * (dy - mean(dy) - xhat * mean(dy * xhat)).
pub fn layernorm_bwd<S: Scalar>(xhat: &Tensor<S>, rstd: &[S], dout: &Tensor<S>) -> Tensor<S> {
    let cols = xhat.cols();
    let inv_n = S::from_f64(1.0 / cols as f64);
    let mut dx = Tensor::zeros(xhat.shape());
    for (r, dx_row) in dx.data_mut().chunks_mut(cols).enumerate() {
        let x_row = &xhat.data()[r * cols..(r + 1) * cols];
        let d_row = &dout.data()[r * cols..(r + 1) * cols];
        let mut mean_d = S::ZERO;
        let mut mean_dx = S::ZERO;
        for i in 0..cols {
            mean_d += d_row[i];
            mean_dx += d_row[i] * x_row[i];
        }
        mean_d *= inv_n;
        mean_dx *= inv_n;
        for i in 0..cols {
            dx_row[i] = rstd[r] * (d_row[i] - mean_d - x_row[i] * mean_dx);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// fused multi-head attention
// ---------------------------------------------------------------------------

/// Multi-head scaled dot-product attention over q, k, v of shape
/// [batch*seq, embed], heads splitting the embed dim. `mask` is a [seq, seq]
/// additive logit mask shared across the batch. Returns the attention
/// output [batch*seq, embed] and the probabilities [batch, heads, seq, seq]
/// saved for backward.
pub fn mha_fwd<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    batch: usize,
    seq: usize,
    heads: usize,
    mask: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let embed = q.cols();
    assert_eq!(q.shape(), k.shape(), "mha: q/k shape mismatch");
    assert_eq!(q.shape(), v.shape(), "mha: q/v shape mismatch");
    assert_eq!(q.rows(), batch * seq, "mha: rows != batch*seq");
    assert_eq!(embed % heads, 0, "mha: embed {embed} not divisible by heads {heads}");
    assert_eq!(mask.shape(), &[seq, seq], "mha: mask must be [seq, seq]");
    let hd = embed / heads;
    let scale = S::from_f64(1.0 / (hd as f64).sqrt());

    let mut out = Tensor::zeros(&[batch * seq, embed]);
    let mut att = Tensor::zeros(&[batch, heads, seq, seq]);
    let (q_d, k_d, v_d, m_d) = (q.data(), k.data(), v.data(), mask.data());
    let att_ptr = att.data_mut().as_mut_ptr() as usize;

    par::for_chunks_mut(out.data_mut(), seq * embed, |b, out_b: &mut [S]| {
        let att_b = unsafe {
            std::slice::from_raw_parts_mut(
                (att_ptr as *mut S).add(b * heads * seq * seq),
                heads * seq * seq,
            )
        };
        let row0 = b * seq * embed;
        for h in 0..heads {
            let off = row0 + h * hd;
            let scores = &mut att_b[h * seq * seq..(h + 1) * seq * seq];
            unsafe {
                S::gemm(
                    seq,
                    hd,
                    seq,
                    scale,
                    q_d.as_ptr().add(off),
                    embed as isize,
                    1,
                    k_d.as_ptr().add(off),
                    1,
                    embed as isize,
                    S::ZERO,
                    scores.as_mut_ptr(),
                    seq as isize,
                    1,
                );
            }
            for (i, srow) in scores.chunks_mut(seq).enumerate() {
                for (j, s) in srow.iter_mut().enumerate() {
                    *s += m_d[i * seq + j];
                }
                softmax_row_in_place(srow);
            }
            unsafe {
                S::gemm(
                    seq,
                    seq,
                    hd,
                    S::ONE,
                    scores.as_ptr(),
                    seq as isize,
                    1,
                    v_d.as_ptr().add(off),
                    embed as isize,
                    1,
                    S::ZERO,
                    out_b.as_mut_ptr().add(h * hd),
                    embed as isize,
                    1,
                );
            }
        }
    });
    (out, att)
}

/// Backward of [`mha_fwd`]; returns (dq, dk, dv).
#[allow(clippy::too_many_arguments)]
pub fn mha_bwd<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    att: &Tensor<S>,
    dout: &Tensor<S>,
    batch: usize,
    seq: usize,
    heads: usize,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let embed = q.cols();
    let hd = embed / heads;
    debug_assert_eq!(q.rows(), batch * seq);
    let scale = S::from_f64(1.0 / (hd as f64).sqrt());

    let mut dq = Tensor::zeros(q.shape());
    let mut dk = Tensor::zeros(k.shape());
    let mut dv = Tensor::zeros(v.shape());
    let (q_d, k_d, v_d, att_d, dout_d) = (q.data(), k.data(), v.data(), att.data(), dout.data());
    let dk_ptr = dk.data_mut().as_mut_ptr() as usize;
    let dv_ptr = dv.data_mut().as_mut_ptr() as usize;

    par::for_chunks_mut(dq.data_mut(), seq * embed, |b, dq_b: &mut [S]| {
        let row0 = b * seq * embed;
        let dk_b = unsafe { std::slice::from_raw_parts_mut((dk_ptr as *mut S).add(row0), seq * embed) };
        let dv_b = unsafe { std::slice::from_raw_parts_mut((dv_ptr as *mut S).add(row0), seq * embed) };
        let mut datt = vec![S::ZERO; seq * seq];
        for h in 0..heads {
            let off = row0 + h * hd;
            let att_h = &att_d[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            unsafe {
                // dv_h = att_hᵀ . dout_h
                S::gemm(
                    seq,
                    seq,
                    hd,
                    S::ONE,
                    att_h.as_ptr(),
                    1,
                    seq as isize,
                    dout_d.as_ptr().add(off),
                    embed as isize,
                    1,
                    S::ZERO,
                    dv_b.as_mut_ptr().add(h * hd),
                    embed as isize,
                    1,
                );
                // datt = dout_h . v_hᵀ
                S::gemm(
                    seq,
                    hd,
                    seq,
                    S::ONE,
                    dout_d.as_ptr().add(off),
                    embed as isize,
                    1,
                    v_d.as_ptr().add(off),
                    1,
                    embed as isize,
                    S::ZERO,
                    datt.as_mut_ptr(),
                    seq as isize,
                    1,
                );
            }
            // softmax vjp rowwise, folding in the score scale
            for i in 0..seq {
                let a_row = &att_h[i * seq..(i + 1) * seq];
                let d_row = &mut datt[i * seq..(i + 1) * seq];
                let mut dot = S::ZERO;
                for j in 0..seq {
                    dot += d_row[j] * a_row[j];
                }
                for j in 0..seq {
                    d_row[j] = scale * a_row[j] * (d_row[j] - dot);
                }
            }
            unsafe {
                // dq_h = dscores . k_h
                S::gemm(
                    seq,
                    seq,
                    hd,
                    S::ONE,
                    datt.as_ptr(),
                    seq as isize,
                    1,
                    k_d.as_ptr().add(off),
                    embed as isize,
                    1,
                    S::ZERO,
                    dq_b.as_mut_ptr().add(h * hd),
                    embed as isize,
                    1,
                );
                // dk_h = dscoresᵀ . q_h
                S::gemm(
                    seq,
                    seq,
                    hd,
                    S::ONE,
                    datt.as_ptr(),
                    1,
                    seq as isize,
                    q_d.as_ptr().add(off),
                    embed as isize,
                    1,
                    S::ZERO,
                    dk_b.as_mut_ptr().add(h * hd),
                    embed as isize,
                    1,
                );
            }
        }
    });
    (dq, dk, dv)
}
