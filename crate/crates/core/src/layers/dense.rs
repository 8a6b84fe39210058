use super::LayerSpec;
use crate::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

pub(super) fn forward(spec: &LayerSpec, w: &Tensor, input: &Tensor, batch: usize) -> Vec<f64> {
    let (n_in, n_out) = (spec.in_units(), spec.out_units());
    let mut out = vec![0.0; batch * n_out];
    gemm(
        MatRef::row_major(input.data(), batch, n_in),
        MatRef::row_major(w.data(), n_in, n_out),
        0.0,
        &mut out,
        n_out,
    );
    out
}

/// `dx = s * W'` with `W'` stored `[out, in]`.
pub(super) fn adjoint_feedback(spec: &LayerSpec, fb_w: &Tensor, signal: &Tensor, batch: usize) -> Vec<f64> {
    let (n_in, n_out) = (spec.in_units(), spec.out_units());
    let mut out = vec![0.0; batch * n_in];
    gemm(
        MatRef::row_major(signal.data(), batch, n_out),
        MatRef::row_major(fb_w.data(), n_out, n_in),
        0.0,
        &mut out,
        n_in,
    );
    out
}

/// `dx = s * W^T` with `W` stored `[in, out]`.
pub(super) fn adjoint_forward(spec: &LayerSpec, w: &Tensor, signal: &Tensor, batch: usize) -> Vec<f64> {
    let (n_in, n_out) = (spec.in_units(), spec.out_units());
    let mut out = vec![0.0; batch * n_in];
    gemm(
        MatRef::row_major(signal.data(), batch, n_out),
        MatRef::row_major(w.data(), n_in, n_out).t(),
        0.0,
        &mut out,
        n_in,
    );
    out
}

pub(super) fn weight_grads(spec: &LayerSpec, x: &Tensor, post: &Tensor, batch: usize) -> Vec<f64> {
    let (n_in, n_out) = (spec.in_units(), spec.out_units());
    let mut out = vec![0.0; n_in * n_out];
    gemm(
        MatRef::row_major(x.data(), batch, n_in).t(),
        MatRef::row_major(post.data(), batch, n_out),
        0.0,
        &mut out,
        n_out,
    );
    out
}
