//! Per-layer kernels.
//!
//! Every weighted layer has two weight stores: the feedforward weights used to
//! compute activations and a separate set of feedback weights that carry the
//! selected action's signal back down. Element `(m, p)` of the feedback store
//! pairs with element `(p, m)` of the forward store; for spatial layers the
//! pairing is per receptive-field connection.
//!
//! Weight layouts (forward / feedback):
//!
//! | kind              | forward               | feedback              |
//! |-------------------|-----------------------|-----------------------|
//! | FullyConnected    | `[in, out]`           | `[out, in]`           |
//! | Conv2d            | `[O, kh, kw, C]`      | `[kh, kw, C, O]`      |
//! | LocallyConnected2d| `[OH, OW, O, kh, kw, C]` | `[OH, OW, kh, kw, C, O]` |
//!
//! Activations are batched: a tensor of shape `[B, ...unit_shape]`, spatial
//! units laid out as `[H, W, C]`.

mod dense;
mod dropout;
mod spatial;

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::tensor::{relu, relu_gate, uniform_init, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    FullyConnected,
    Conv2d,
    LocallyConnected2d,
    Dropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// Identity; used for the Q-value output layer.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub num_filters: usize,
    pub drop_rate: f64,
    pub activation: Activation,
}

/// `floor((in + 2 pad - kernel) / stride) + 1`.
pub fn spatial_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidSpec("kernel and stride must be positive".into()));
    }
    if input + 2 * pad < kernel {
        return Err(Error::InvalidSpec(format!(
            "kernel {kernel} larger than padded input {}",
            input + 2 * pad
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

impl LayerSpec {
    pub fn fully_connected(in_shape: &[usize], units: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::FullyConnected,
            in_shape: in_shape.to_vec(),
            out_shape: vec![units],
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            num_filters: units,
            drop_rate: 0.0,
            activation,
        }
    }

    pub fn conv2d(
        in_shape: &[usize],
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        Self::spatial(LayerKind::Conv2d, in_shape, filters, kernel, stride, padding)
    }

    pub fn locally_connected(
        in_shape: &[usize],
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        Self::spatial(
            LayerKind::LocallyConnected2d,
            in_shape,
            filters,
            kernel,
            stride,
            padding,
        )
    }

    fn spatial(
        kind: LayerKind,
        in_shape: &[usize],
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        if in_shape.len() != 3 {
            return Err(Error::InvalidSpec(format!(
                "spatial layer needs [h, w, c] input, got {in_shape:?}"
            )));
        }
        let oh = spatial_out_dim(in_shape[0], kernel.0, stride.0, padding.0)?;
        let ow = spatial_out_dim(in_shape[1], kernel.1, stride.1, padding.1)?;
        Ok(Self {
            kind,
            in_shape: in_shape.to_vec(),
            out_shape: vec![oh, ow, filters],
            kernel,
            stride,
            padding,
            num_filters: filters,
            drop_rate: 0.0,
            activation: Activation::Relu,
        })
    }

    pub fn dropout(shape: &[usize], drop_rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_rate) {
            return Err(Error::InvalidSpec(format!(
                "drop rate {drop_rate} outside [0, 1)"
            )));
        }
        Ok(Self {
            kind: LayerKind::Dropout,
            in_shape: shape.to_vec(),
            out_shape: shape.to_vec(),
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            num_filters: 0,
            drop_rate,
            activation: Activation::Linear,
        })
    }

    /// Re-checks the shape algebra, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = match self.kind {
            LayerKind::FullyConnected => {
                if self.out_shape.len() != 1 || self.in_shape.is_empty() {
                    return Err(Error::InvalidSpec("fully connected shapes".into()));
                }
                Self::fully_connected(&self.in_shape, self.out_shape[0], self.activation)
            }
            LayerKind::Conv2d | LayerKind::LocallyConnected2d => {
                let mut s = Self::spatial(
                    self.kind,
                    &self.in_shape,
                    self.num_filters,
                    self.kernel,
                    self.stride,
                    self.padding,
                )?;
                s.activation = self.activation;
                s
            }
            LayerKind::Dropout => Self::dropout(&self.in_shape, self.drop_rate)?,
        };
        if rebuilt.out_shape != self.out_shape {
            return Err(Error::InvalidSpec(format!(
                "out_shape {:?} inconsistent with geometry, expected {:?}",
                self.out_shape, rebuilt.out_shape
            )));
        }
        if self.in_shape.contains(&0) || self.out_shape.contains(&0) {
            return Err(Error::InvalidSpec("zero-sized dimension".into()));
        }
        Ok(())
    }

    pub fn in_units(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_units(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn has_weights(&self) -> bool {
        self.kind != LayerKind::Dropout
    }

    /// Receptive field size `kh * kw * C` for spatial kinds.
    pub fn patch_len(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.in_shape.get(2).copied().unwrap_or(1)
    }

    /// Number of output positions `OH * OW` for spatial kinds.
    pub fn positions(&self) -> usize {
        self.out_shape[0] * self.out_shape[1]
    }

    pub fn forward_weight_shape(&self) -> Vec<usize> {
        let (kh, kw) = self.kernel;
        match self.kind {
            LayerKind::FullyConnected => vec![self.in_units(), self.out_units()],
            LayerKind::Conv2d => vec![self.num_filters, kh, kw, self.in_shape[2]],
            LayerKind::LocallyConnected2d => vec![
                self.out_shape[0],
                self.out_shape[1],
                self.num_filters,
                kh,
                kw,
                self.in_shape[2],
            ],
            LayerKind::Dropout => vec![0],
        }
    }

    pub fn feedback_weight_shape(&self) -> Vec<usize> {
        let (kh, kw) = self.kernel;
        match self.kind {
            LayerKind::FullyConnected => vec![self.out_units(), self.in_units()],
            LayerKind::Conv2d => vec![kh, kw, self.in_shape[2], self.num_filters],
            LayerKind::LocallyConnected2d => vec![
                self.out_shape[0],
                self.out_shape[1],
                kh,
                kw,
                self.in_shape[2],
                self.num_filters,
            ],
            LayerKind::Dropout => vec![0],
        }
    }

    /// The forward store viewed as `blocks` row-major `[rows, cols]` matrices
    /// whose transposes make up the feedback store.
    fn pairing_blocks(&self) -> (usize, usize, usize) {
        match self.kind {
            LayerKind::FullyConnected => (1, self.in_units(), self.out_units()),
            LayerKind::Conv2d => (1, self.num_filters, self.patch_len()),
            LayerKind::LocallyConnected2d => (self.positions(), self.num_filters, self.patch_len()),
            LayerKind::Dropout => (0, 0, 0),
        }
    }

    /// Flat feedback-store index paired with forward-store index `forward_idx`.
    pub fn feedback_index(&self, forward_idx: usize) -> usize {
        let (_, rows, cols) = self.pairing_blocks();
        let block = rows * cols;
        let (b, rest) = (forward_idx / block, forward_idx % block);
        let (r, c) = (rest / cols, rest % cols);
        b * block + c * rows + r
    }

    fn check_batch(&self, t: &Tensor, unit_shape: &[usize], context: &'static str) -> Result<usize> {
        let shape = t.shape();
        if shape.is_empty() || &shape[1..] != unit_shape {
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend_from_slice(unit_shape);
            return Err(Error::ShapeMismatch {
                context,
                expected,
                actual: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    fn batched(&self, batch: usize, unit_shape: &[usize]) -> Vec<usize> {
        let mut s = Vec::with_capacity(unit_shape.len() + 1);
        s.push(batch);
        s.extend_from_slice(unit_shape);
        s
    }
}

/// Feedforward and feedback weights of one layer, stored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub forward: Tensor,
    pub feedback: Tensor,
}

impl LayerWeights {
    pub fn none() -> Self {
        Self {
            forward: Tensor::empty(),
            feedback: Tensor::empty(),
        }
    }

    /// Uniform init in `[-half_width, half_width]` with feedback weights equal
    /// to their paired forward weights.
    pub fn init_reciprocal(spec: &LayerSpec, half_width: f64, rng: &mut SeededRng) -> Result<Self> {
        if !spec.has_weights() {
            return Ok(Self::none());
        }
        let forward = uniform_init(&spec.forward_weight_shape(), -half_width, half_width, rng)?;
        Self::reciprocal(spec, forward)
    }

    /// Builds the feedback store as the exact pairing of `forward`.
    pub fn reciprocal(spec: &LayerSpec, forward: Tensor) -> Result<Self> {
        if !spec.has_weights() {
            return Ok(Self::none());
        }
        forward.expect_shape(&spec.forward_weight_shape(), "LayerWeights::reciprocal")?;
        let mut feedback = Tensor::zeros(&spec.feedback_weight_shape());
        let fb = feedback.data_mut();
        for (i, &v) in forward.data().iter().enumerate() {
            fb[spec.feedback_index(i)] = v;
        }
        Ok(Self { forward, feedback })
    }

    fn check(&self, spec: &LayerSpec) -> Result<()> {
        if spec.has_weights() {
            self.forward
                .expect_shape(&spec.forward_weight_shape(), "forward weights")?;
            self.feedback
                .expect_shape(&spec.feedback_weight_shape(), "feedback weights")?;
        }
        Ok(())
    }
}

/// Everything one layer's forward pass leaves behind for the later phases.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub pre_activation: Tensor,
    pub activation: Tensor,
    pub gate: Tensor,
    pub dropout_mask: Option<Tensor>,
}

/// Forward pass of one layer on a batch `[B, ...in_shape]`.
///
/// Weighted kinds compute `a = sum_i w_ij x_i` (no bias) and `y = relu(a)`
/// unless the layer is linear. Dropout samples a fresh inverted-scaling mask per
/// element when `training` is set and is the identity otherwise.
pub fn layer_forward(
    spec: &LayerSpec,
    weights: &LayerWeights,
    input: &Tensor,
    rng: &mut SeededRng,
    training: bool,
) -> Result<LayerOutput> {
    let batch = spec.check_batch(input, &spec.in_shape, "layer_forward input")?;
    weights.check(spec)?;
    let out_shape = spec.batched(batch, &spec.out_shape);
    let pre = match spec.kind {
        LayerKind::FullyConnected => dense::forward(spec, &weights.forward, input, batch),
        LayerKind::Conv2d => spatial::conv_forward(spec, &weights.forward, input, batch),
        LayerKind::LocallyConnected2d => {
            spatial::local_forward(spec, &weights.forward, input, batch)
        }
        LayerKind::Dropout => return Ok(dropout::forward(spec, input, rng, training)),
    };
    let pre = Tensor::new(out_shape, pre)?;
    let (activation, gate) = match spec.activation {
        Activation::Relu => {
            let y = relu(&pre);
            let g = relu_gate(&y);
            (y, g)
        }
        Activation::Linear => (pre.clone(), Tensor::ones(pre.shape())),
    };
    Ok(LayerOutput {
        pre_activation: pre,
        activation,
        gate,
        dropout_mask: None,
    })
}

#[derive(Clone, Copy)]
enum WeightRoute {
    Feedback,
    Forward,
}

fn adjoint(
    spec: &LayerSpec,
    weights: &LayerWeights,
    upstream: &Tensor,
    gate: &Tensor,
    mask: Option<&Tensor>,
    route: WeightRoute,
) -> Result<Tensor> {
    let batch = spec.check_batch(upstream, &spec.out_shape, "adjoint upstream signal")?;
    gate.check_same_shape(upstream, "adjoint gate")?;
    weights.check(spec)?;
    let signal = upstream.hadamard(gate)?;
    let in_shape = spec.batched(batch, &spec.in_shape);
    let data = match (spec.kind, route) {
        (LayerKind::FullyConnected, WeightRoute::Feedback) => {
            dense::adjoint_feedback(spec, &weights.feedback, &signal, batch)
        }
        (LayerKind::FullyConnected, WeightRoute::Forward) => {
            dense::adjoint_forward(spec, &weights.forward, &signal, batch)
        }
        (LayerKind::Conv2d, WeightRoute::Feedback) => {
            spatial::conv_adjoint_feedback(spec, &weights.feedback, &signal, batch)
        }
        (LayerKind::Conv2d, WeightRoute::Forward) => {
            spatial::conv_adjoint_forward(spec, &weights.forward, &signal, batch)
        }
        (LayerKind::LocallyConnected2d, WeightRoute::Feedback) => {
            spatial::local_adjoint_feedback(spec, &weights.feedback, &signal, batch)
        }
        (LayerKind::LocallyConnected2d, WeightRoute::Forward) => {
            spatial::local_adjoint_forward(spec, &weights.forward, &signal, batch)
        }
        (LayerKind::Dropout, _) => return dropout::adjoint(signal, mask),
    };
    Tensor::new(in_shape, data)
}

/// Feedback arriving at the layer's input-side units:
/// `fb_p = sum_m gate_m * feedback_w[m, p] * fb_upstream_m`.
///
/// For dropout the signal passes through multiplied by the stored mask.
pub fn layer_feedback(
    spec: &LayerSpec,
    weights: &LayerWeights,
    fb_upstream: &Tensor,
    gate: &Tensor,
    dropout_mask: Option<&Tensor>,
) -> Result<Tensor> {
    adjoint(spec, weights, fb_upstream, gate, dropout_mask, WeightRoute::Feedback)
}

/// Error backpropagation through the forward weights:
/// `e_p = sum_m w[p, m] * gate_m * e_upstream_m`.
pub fn layer_backprop_error(
    spec: &LayerSpec,
    weights: &LayerWeights,
    err_upstream: &Tensor,
    gate: &Tensor,
    dropout_mask: Option<&Tensor>,
) -> Result<Tensor> {
    adjoint(spec, weights, err_upstream, gate, dropout_mask, WeightRoute::Forward)
}

/// `sum_b x_b (x) s_b` shaped like the forward weights, where `s` is the
/// per-unit postsynaptic factor. Convolutions sum over all positions that share
/// a kernel weight.
pub fn layer_weight_grads(spec: &LayerSpec, pre_layer_activity: &Tensor, post: &Tensor) -> Result<Tensor> {
    let batch = spec.check_batch(pre_layer_activity, &spec.in_shape, "weight grads input")?;
    let b2 = spec.check_batch(post, &spec.out_shape, "weight grads post factor")?;
    if batch != b2 {
        return Err(Error::ShapeMismatch {
            context: "weight grads batch",
            expected: vec![batch],
            actual: vec![b2],
        });
    }
    let data = match spec.kind {
        LayerKind::FullyConnected => dense::weight_grads(spec, pre_layer_activity, post, batch),
        LayerKind::Conv2d => spatial::conv_weight_grads(spec, pre_layer_activity, post, batch),
        LayerKind::LocallyConnected2d => {
            spatial::local_weight_grads(spec, pre_layer_activity, post, batch)
        }
        LayerKind::Dropout => return Ok(Tensor::empty()),
    };
    Tensor::new(spec.forward_weight_shape(), data)
}

/// Four-factor update direction `grad_pm = sum_b delta_b * x_bp * g_bm * fb_bm`.
///
/// Learning rate and batch averaging are left to the caller.
pub fn layer_update_grads(
    spec: &LayerSpec,
    pre_layer_activity: &Tensor,
    gate: &Tensor,
    fb: &Tensor,
    delta: &[f64],
) -> Result<Tensor> {
    let batch = spec.check_batch(fb, &spec.out_shape, "update grads feedback")?;
    gate.check_same_shape(fb, "update grads gate")?;
    if delta.len() != batch {
        return Err(Error::ShapeMismatch {
            context: "update grads delta",
            expected: vec![batch],
            actual: vec![delta.len()],
        });
    }
    let mut post = fb.hadamard(gate)?;
    let width = spec.out_units();
    for (row, &d) in post.data_mut().chunks_mut(width.max(1)).zip(delta) {
        for v in row {
            *v *= d;
        }
    }
    layer_weight_grads(spec, pre_layer_activity, &post)
}

/// Adds `alpha * grad` to the forward weights and to the paired feedback weights.
pub fn apply_grad(spec: &LayerSpec, weights: &mut LayerWeights, grad: &Tensor, alpha: f64) -> Result<()> {
    if !spec.has_weights() {
        return Ok(());
    }
    weights.check(spec)?;
    grad.expect_shape(&spec.forward_weight_shape(), "apply_grad")?;
    let (blocks, rows, cols) = spec.pairing_blocks();
    let fwd = weights.forward.data_mut();
    let fb = weights.feedback.data_mut();
    let g = grad.data();
    for b in 0..blocks {
        let base = b * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                let step = alpha * g[base + r * cols + c];
                fwd[base + r * cols + c] += step;
                fb[base + c * rows + r] += step;
            }
        }
    }
    Ok(())
}

/// Largest `|forward_w - paired feedback_w|` over the layer.
pub fn reciprocity_gap(spec: &LayerSpec, weights: &LayerWeights) -> f64 {
    if !spec.has_weights() {
        return 0.0;
    }
    let fb = weights.feedback.data();
    weights
        .forward
        .data()
        .iter()
        .enumerate()
        .fold(0.0, |m, (i, &w)| m.max((w - fb[spec.feedback_index(i)]).abs()))
}

#[cfg(test)]
mod tests;
