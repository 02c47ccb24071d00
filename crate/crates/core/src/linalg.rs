//! Convolution-family kernels: im2col convolution, pooling, fully-connected.
//!
//! Everything is plain `f64` loops shaped for the autovectorizer: matmuls
//! accumulate along contiguous rows, dots use fixed 4-lane unrolling. All
//! accumulation orders are fixed, so results are bit-reproducible across runs.

use crate::error::{Error, Result};
use crate::tape::{Node, Tape, ValueId};
use crate::tensor::Tensor;

/// out[m,n] = sum_l a[m,l] * b[l,n]; `out` must be zeroed by the caller.
pub(crate) fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
}

/// Fixed-order 4-lane dot product.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// out[m,n] = sum_l a[m,l] * b[n,l]  (i.e. a · bᵀ); rows of both are contiguous.
pub(crate) fn matmul_nt(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// out[m,n] = sum_l a[l,m] * b[l,n]  (i.e. aᵀ · b); accumulates rank-1 updates.
pub(crate) fn matmul_tn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for (i, ail) in arow.iter().enumerate() {
            if *ail == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
}

/// Lowers one sample [C,H,W] to a [C·kh·kw, oh·ow] patch matrix with zero padding.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [f64],
) {
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add inverse of [`im2col`]: folds patch-matrix gradients back onto the image.
#[allow(clippy::too_many_arguments)]
fn col2im_acc(
    gcol: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    gx: &mut [f64],
) {
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let src = &gcol[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    for (ox, s) in srow.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            prow[ix as usize] += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Output extent of a length-`h` axis under kernel `k`, `stride`, `pad` (floor semantics).
pub(crate) fn conv_out_extent(h: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = h + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

impl Tape {
    /// 2-D cross-correlation with zero padding.
    ///
    /// `x`: [N,C,H,W], `w`: [K,C,kh,kw], `b`: [K] → [N,K,H',W'] with
    /// H' = (H + 2·pad − kh)/stride + 1 under floor division.
    pub fn conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 || xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: xs,
                right: ws,
            });
        }
        if stride < 1 {
            return Err(Error::InvalidGeometry {
                op: "conv2d",
                msg: format!("stride must be >= 1, got {stride}"),
            });
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (k, kh, kw) = (ws[0], ws[2], ws[3]);
        let (oh, ow) = match (
            conv_out_extent(h, kh, stride, pad),
            conv_out_extent(wd, kw, stride, pad),
        ) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
            _ => {
                return Err(Error::InvalidGeometry {
                    op: "conv2d",
                    msg: format!(
                        "kernel {kh}x{kw} stride {stride} pad {pad} yields no output on {h}x{wd} input"
                    ),
                })
            }
        };

        let ckk = c * kh * kw;
        let mut col = vec![0.0; ckk * oh * ow];
        let mut out = vec![0.0; n * k * oh * ow];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        for ni in 0..n {
            im2col(
                &xv[ni * c * h * wd..(ni + 1) * c * h * wd],
                c,
                h,
                wd,
                kh,
                kw,
                stride,
                pad,
                oh,
                ow,
                &mut col,
            );
            let dst = &mut out[ni * k * oh * ow..(ni + 1) * k * oh * ow];
            matmul_acc(dst, wv, &col, k, ckk, oh * ow);
            for ki in 0..k {
                let bias = bv[ki];
                for o in &mut dst[ki * oh * ow..(ki + 1) * oh * ow] {
                    *o += bias;
                }
            }
        }
        let out = Tensor::new(vec![n, k, oh, ow], out)?;
        Ok(self.push(
            out,
            Node::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        ))
    }

    /// Max pooling with square kernel `k`, no padding.
    ///
    /// Ties within a window route the gradient to the first (scan-order) element.
    pub fn maxpool2d(&mut self, x: ValueId, k: usize, stride: usize) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "maxpool2d",
                left: xs,
                right: vec![0, 0, 0, 0],
            });
        }
        if stride < 1 || k < 1 {
            return Err(Error::InvalidGeometry {
                op: "maxpool2d",
                msg: format!("kernel {k} / stride {stride} must be >= 1"),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if k > h || k > w {
            return Err(Error::InvalidGeometry {
                op: "maxpool2d",
                msg: format!("kernel {k} exceeds input {h}x{w}"),
            });
        }
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        let mut o = 0;
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (y0, x0) = (oy * stride, ox * stride);
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = base + y0 * w + x0;
                        for ky in 0..k {
                            for kx in 0..k {
                                let idx = base + (y0 + ky) * w + (x0 + kx);
                                if xv[idx] > best {
                                    best = xv[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out[o] = best;
                        argmax[o] = best_idx;
                        o += 1;
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(out, Node::MaxPool2d { x, k, stride, argmax }))
    }

    /// Mean over the spatial axes: [N,C,H,W] → [N,C].
    pub fn global_avg_pool(&mut self, x: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "global_avg_pool",
                left: xs,
                right: vec![0, 0, 0, 0],
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let hw = h * w;
        let inv = 1.0 / hw as f64;
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for (nc, o) in out.iter_mut().enumerate() {
            *o = xv[nc * hw..(nc + 1) * hw].iter().sum::<f64>() * inv;
        }
        let out = Tensor::new(vec![n, c], out)?;
        Ok(self.push(out, Node::GlobalAvgPool { x }))
    }

    /// Fully-connected layer: x[N,D] · w[D,M] + b[M] → [N,M].
    pub fn fc(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || bs[0] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "fc",
                left: xs,
                right: ws,
            });
        }
        let (n, d, m) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0; n * m];
        matmul_acc(&mut out, self.value(x).data(), self.value(w).data(), n, d, m);
        let bv = self.value(b).data();
        for row in out.chunks_mut(m) {
            for (o, bias) in row.iter_mut().zip(bv) {
                *o += bias;
            }
        }
        let out = Tensor::new(vec![n, m], out)?;
        Ok(self.push(out, Node::Fc { x, w, b }))
    }

    /// Flattens [N, ...] to [N, rest].
    pub fn flatten(&mut self, x: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.is_empty() {
            return Err(Error::InvalidArgument("flatten needs rank >= 1".into()));
        }
        let rest: usize = xs[1..].iter().product();
        self.reshape(x, &[xs[0], rest])
    }
}

/// Gradients for [`Tape::fc`].
pub(crate) fn fc_backward(
    x: &[f64],
    xs: &[usize],
    w: &[f64],
    ws: &[usize],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, d, m) = (xs[0], xs[1], ws[1]);
    let mut gx = vec![0.0; n * d];
    matmul_nt(&mut gx, g, w, n, m, d); // g[N,M] · wᵀ  (w stored [D,M] so w[j,l] rows over D... see below)
    // matmul_nt computes sum_l g[i,l]*w_rows[j*k+l] with k=m: w addressed as [D,M]
    // row j of length M — exactly wᵀ applied from the right.
    let mut gw = vec![0.0; d * m];
    matmul_tn(&mut gw, x, g, d, n, m); // xᵀ[D,N] · g[N,M]
    let mut gb = vec![0.0; m];
    for row in g.chunks(m) {
        for (o, v) in gb.iter_mut().zip(row) {
            *o += v;
        }
    }
    (gx, gw, gb)
}

/// Gradients for [`Tape::conv2d`]: recomputes im2col per sample rather than
/// caching it on the tape (the patch matrices would dwarf the activations).
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &[f64],
    out_shape: &[usize],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let xs = x.shape();
    let ws = w.shape();
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (k, kh, kw) = (ws[0], ws[2], ws[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let ckk = c * kh * kw;
    let ohw = oh * ow;

    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; k];
    let mut col = vec![0.0; ckk * ohw];
    let mut gcol = vec![0.0; ckk * ohw];

    let xv = x.data();
    let wv = w.data();
    for ni in 0..n {
        let gn = &g[ni * k * ohw..(ni + 1) * k * ohw];
        // Bias: plain sums over the spatial grid.
        for ki in 0..k {
            gb[ki] += gn[ki * ohw..(ki + 1) * ohw].iter().sum::<f64>();
        }
        // Weights: g_n · colᵀ.
        im2col(
            &xv[ni * c * h * wd..(ni + 1) * c * h * wd],
            c,
            h,
            wd,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut col,
        );
        matmul_nt(&mut gw, gn, &col, k, ohw, ckk);
        // Input: wᵀ · g_n folded back through col2im.
        gcol.fill(0.0);
        matmul_tn(&mut gcol, wv, gn, ckk, k, ohw);
        col2im_acc(
            &gcol,
            c,
            h,
            wd,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut gx[ni * c * h * wd..(ni + 1) * c * h * wd],
        );
    }
    (gx, gw, gb)
}
