//! Convolution and locally connected kernels via im2col.
//!
//! Patches are laid out `[B * OH * OW, kh * kw * C]` with patch element order
//! `(dy, dx, c)`, matching the trailing `[kh, kw, C]` axes of the weights.

use super::LayerSpec;
use crate::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

struct Geometry {
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl Geometry {
    fn of(spec: &LayerSpec) -> Self {
        Self {
            h: spec.in_shape[0],
            w: spec.in_shape[1],
            c: spec.in_shape[2],
            oh: spec.out_shape[0],
            ow: spec.out_shape[1],
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.padding.0,
            pw: spec.padding.1,
        }
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Input offset of kernel tap `(dy, dx)` at output `(oy, ox)`, if inside the image.
    fn tap(&self, oy: usize, ox: usize, dy: usize, dx: usize) -> Option<usize> {
        let iy = (oy * self.sh + dy).checked_sub(self.ph)?;
        let ix = (ox * self.sw + dx).checked_sub(self.pw)?;
        (iy < self.h && ix < self.w).then(|| (iy * self.w + ix) * self.c)
    }
}

fn im2col(g: &Geometry, input: &[f64], batch: usize) -> Vec<f64> {
    let (k, p, img_len) = (g.patch(), g.positions(), g.h * g.w * g.c);
    let mut cols = vec![0.0; batch * p * k];
    for b in 0..batch {
        let img = &input[b * img_len..(b + 1) * img_len];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row_start = (b * p + oy * g.ow + ox) * k;
                let row = &mut cols[row_start..row_start + k];
                for dy in 0..g.kh {
                    for dx in 0..g.kw {
                        if let Some(src) = g.tap(oy, ox, dy, dx) {
                            let dst = (dy * g.kw + dx) * g.c;
                            row[dst..dst + g.c].copy_from_slice(&img[src..src + g.c]);
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(g: &Geometry, cols: &[f64], batch: usize) -> Vec<f64> {
    let (k, p, img_len) = (g.patch(), g.positions(), g.h * g.w * g.c);
    let mut out = vec![0.0; batch * img_len];
    for b in 0..batch {
        let img = &mut out[b * img_len..(b + 1) * img_len];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row_start = (b * p + oy * g.ow + ox) * k;
                let row = &cols[row_start..row_start + k];
                for dy in 0..g.kh {
                    for dx in 0..g.kw {
                        if let Some(dst) = g.tap(oy, ox, dy, dx) {
                            let src = (dy * g.kw + dx) * g.c;
                            for (o, v) in img[dst..dst + g.c].iter_mut().zip(&row[src..src + g.c]) {
                                *o += v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(super) fn conv_forward(spec: &LayerSpec, w: &Tensor, input: &Tensor, batch: usize) -> Vec<f64> {
    let g = Geometry::of(spec);
    let (k, n, o) = (g.patch(), batch * g.positions(), spec.num_filters);
    let cols = im2col(&g, input.data(), batch);
    let mut out = vec![0.0; n * o];
    gemm(
        MatRef::row_major(&cols, n, k),
        MatRef::row_major(w.data(), o, k).t(),
        0.0,
        &mut out,
        o,
    );
    out
}

fn conv_adjoint(g: &Geometry, weights_ko: MatRef<'_>, signal: &Tensor, batch: usize, o: usize) -> Vec<f64> {
    let (k, n) = (g.patch(), batch * g.positions());
    let mut dcols = vec![0.0; n * k];
    gemm(MatRef::row_major(signal.data(), n, o), weights_ko, 0.0, &mut dcols, k);
    col2im(g, &dcols, batch)
}

/// Feedback store is `[K, O]`, so the adjoint multiplies by its transpose.
pub(super) fn conv_adjoint_feedback(spec: &LayerSpec, fb_w: &Tensor, signal: &Tensor, batch: usize) -> Vec<f64> {
    let g = Geometry::of(spec);
    let (k, o) = (g.patch(), spec.num_filters);
    conv_adjoint(&g, MatRef::row_major(fb_w.data(), k, o).t(), signal, batch, o)
}

pub(super) fn conv_adjoint_forward(spec: &LayerSpec, w: &Tensor, signal: &Tensor, batch: usize) -> Vec<f64> {
    let g = Geometry::of(spec);
    let (k, o) = (g.patch(), spec.num_filters);
    conv_adjoint(&g, MatRef::row_major(w.data(), o, k), signal, batch, o)
}

pub(super) fn conv_weight_grads(spec: &LayerSpec, x: &Tensor, post: &Tensor, batch: usize) -> Vec<f64> {
    let g = Geometry::of(spec);
    let (k, n, o) = (g.patch(), batch * g.positions(), spec.num_filters);
    let cols = im2col(&g, x.data(), batch);
    let mut out = vec![0.0; o * k];
    gemm(
        MatRef::row_major(post.data(), n, o).t(),
        MatRef::row_major(&cols, n, k),
        0.0,
        &mut out,
        k,
    );
    out
}

/// Rows of position `p` across the batch in a `[B, P, width]` buffer.
fn position_rows(data: &[f64], p: usize, batch: usize, positions: usize, width: usize) -> MatRef<'_> {
    MatRef {
        data: &data[p * width..],
        rows: batch,
        cols: width,
        row_stride: positions * width,
        col_stride: 1,
    }
}

pub(super) fn local_forward(spec: &LayerSpec, w: &Tensor, input: &Tensor, batch: usize) -> Vec<f64> {
    let g = Geometry::of(spec);
    let (k, np, o) = (g.patch(), g.positions(), spec.num_filters);
    let cols = im2col(&g, input.data(), batch);
    let mut out = vec![0.0; batch * np * o];
    for p in 0..np {
        let w_p = MatRef::row_major(&w.data()[p * o * k..(p + 1) * o * k], o, k);
        gemm(
            position_rows(&cols, p, batch, np, k),
            w_p.t(),
            0.0,
            &mut out[p * o..],
            np * o,
        );
    }
    out
}

pub(super) fn local_adjoint_feedback(spec: &LayerSpec, fb_w: &Tensor, signal: &Tensor, batch: usize) -> Vec<f64> {
    let g = Geometry::of(spec);
    let (k, np, o) = (g.patch(), g.positions(), spec.num_filters);
    let mut dcols = vec![0.0; batch * np * k];
    for p in 0..np {
        // feedback block p is [K, O]; use its transpose
        let fb_p = MatRef::row_major(&fb_w.data()[p * k * o..(p + 1) * k * o], k, o).t();
        gemm(
            position_rows(signal.data(), p, batch, np, o),
            fb_p,
            0.0,
            &mut dcols[p * k..],
            np * k,
        );
    }
    col2im(&g, &dcols, batch)
}

pub(super) fn local_adjoint_forward(spec: &LayerSpec, w: &Tensor, signal: &Tensor, batch: usize) -> Vec<f64> {
    let g = Geometry::of(spec);
    let (k, np, o) = (g.patch(), g.positions(), spec.num_filters);
    let mut dcols = vec![0.0; batch * np * k];
    for p in 0..np {
        let w_p = MatRef::row_major(&w.data()[p * o * k..(p + 1) * o * k], o, k);
        gemm(
            position_rows(signal.data(), p, batch, np, o),
            w_p,
            0.0,
            &mut dcols[p * k..],
            np * k,
        );
    }
    col2im(&g, &dcols, batch)
}

pub(super) fn local_weight_grads(spec: &LayerSpec, x: &Tensor, post: &Tensor, batch: usize) -> Vec<f64> {
    let g = Geometry::of(spec);
    let (k, np, o) = (g.patch(), g.positions(), spec.num_filters);
    let cols = im2col(&g, x.data(), batch);
    let mut out = vec![0.0; np * o * k];
    for p in 0..np {
        gemm(
            position_rows(post.data(), p, batch, np, o).t(),
            position_rows(&cols, p, batch, np, k),
            0.0,
            &mut out[p * o * k..],
            k,
        );
    }
    out
}
