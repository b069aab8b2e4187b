//! Raw-slice kernels for the layer types. Activations are batch-major,
//! `[batch, channels, height, width]` or `[batch, features]`.

use crate::numerics::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub stride: usize,
}

impl ConvGeom {
    // 3x3 kernel, zero padding 1
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 - 3) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 - 3) / self.stride + 1
    }

    pub fn patch(&self) -> usize {
        self.in_ch * 9
    }

    pub fn in_len(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_ch * self.out_h() * self.out_w()
    }
}

/// One sample's input unrolled into `[in_ch * 9, out_h * out_w]`.
pub(crate) fn im2col(g: &ConvGeom, x: &[f32], cols: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.in_ch {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 3 + ky) * 3 + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..][..g.in_w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        *d = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of [`im2col`]'s layout back onto an input-shaped gradient.
pub(crate) fn col2im(g: &ConvGeom, cols: &[f32], dx: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 3 + ky) * 3 + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix >= 0 && ix < g.in_w as isize {
                            plane[iy as usize * g.in_w + ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, weight: &[f32], bias: &[f32], x: &[f32], batch: usize) -> Vec<f32> {
    let p = g.out_h() * g.out_w();
    let mut cols = vec![0.0f32; g.patch() * p];
    let mut out = vec![0.0f32; batch * g.out_len()];
    for (xs, ys) in x.chunks_exact(g.in_len()).zip(out.chunks_exact_mut(g.out_len())) {
        im2col(g, xs, &mut cols);
        for (o, row) in ys.chunks_exact_mut(p).enumerate() {
            row.fill(bias[o]);
        }
        gemm_acc(weight, &cols, ys, g.out_ch, g.patch(), p);
    }
    out
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    weight: &[f32],
    x: &[f32],
    dy: &[f32],
    dweight: &mut [f32],
    dbias: &mut [f32],
    need_dx: bool,
) -> Vec<f32> {
    let p = g.out_h() * g.out_w();
    let mut cols = vec![0.0f32; g.patch() * p];
    let mut dcols = vec![0.0f32; g.patch() * p];
    let mut dx = if need_dx { vec![0.0f32; x.len()] } else { Vec::new() };
    for (s, (xs, dys)) in x.chunks_exact(g.in_len()).zip(dy.chunks_exact(g.out_len())).enumerate() {
        im2col(g, xs, &mut cols);
        gemm_a_bt_acc(dys, &cols, dweight, g.out_ch, p, g.patch());
        for (o, row) in dys.chunks_exact(p).enumerate() {
            dbias[o] += row.iter().sum::<f32>();
        }
        if need_dx {
            dcols.fill(0.0);
            gemm_at_b_acc(weight, dys, &mut dcols, g.out_ch, g.patch(), p);
            col2im(g, &dcols, &mut dx[s * g.in_len()..(s + 1) * g.in_len()]);
        }
    }
    dx
}

/// `y[b, out] = x[b, in] * w[out, in]^T + bias`
pub(crate) fn dense_forward(weight: &[f32], bias: &[f32], x: &[f32], batch: usize, n_in: usize, n_out: usize) -> Vec<f32> {
    let mut y = Vec::with_capacity(batch * n_out);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm_a_bt_acc(x, weight, &mut y, batch, n_in, n_out);
    y
}

pub(crate) fn dense_backward(
    weight: &[f32],
    x: &[f32],
    dy: &[f32],
    dweight: &mut [f32],
    dbias: &mut [f32],
    (batch, n_in, n_out): (usize, usize, usize),
    need_dx: bool,
) -> Vec<f32> {
    gemm_at_b_acc(dy, x, dweight, batch, n_out, n_in);
    for row in dy.chunks_exact(n_out) {
        for (b, &d) in dbias.iter_mut().zip(row) {
            *b += d;
        }
    }
    if !need_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0f32; batch * n_in];
    gemm_acc(dy, weight, &mut dx, batch, n_out, n_in);
    dx
}

/// 2x2 max pooling, stride 2 (odd trailing rows/cols dropped). Returns the
/// output and, per output cell, the flat input index that won (first on ties,
/// NaN wins).
pub(crate) fn maxpool_forward(x: &[f32], planes: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + 2 * oy * w + 2 * ox;
                let mut best = x[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    // NaN propagates, as in the usual frameworks
                    if x[i] > best || (x[i].is_nan() && !best.is_nan()) {
                        best = x[i];
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    (out, arg)
}
