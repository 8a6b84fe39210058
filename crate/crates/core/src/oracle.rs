//! Independent gradient oracles.
//!
//! Nothing here touches the batched kernels in [`crate::layers`]. Layers are
//! re-expressed as explicit connection lists and evaluated one sample at a time
//! with plain loops over the forward weights, so agreement with the Q-AGREL
//! engine is a genuine cross-check rather than a re-run of the same code.

use crate::layers::{Activation, LayerKind, LayerSpec};
use crate::network::{ForwardTrace, Network};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// One synapse: input unit, output unit and flat index into the forward weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connection {
    pub input: usize,
    pub output: usize,
    pub weight: usize,
}

/// Enumerates every synapse of a layer.
pub fn connections(spec: &LayerSpec) -> Vec<Connection> {
    let mut conns = Vec::new();
    match spec.kind {
        LayerKind::FullyConnected => {
            let (n_in, n_out) = (spec.in_units(), spec.out_units());
            for i in 0..n_in {
                for j in 0..n_out {
                    conns.push(Connection {
                        input: i,
                        output: j,
                        weight: i * n_out + j,
                    });
                }
            }
        }
        LayerKind::Conv2d | LayerKind::LocallyConnected2d => {
            let [h, w, c] = [spec.in_shape[0], spec.in_shape[1], spec.in_shape[2]];
            let [oh, ow, o] = [spec.out_shape[0], spec.out_shape[1], spec.out_shape[2]];
            let (kh, kw) = spec.kernel;
            for oy in 0..oh {
                for ox in 0..ow {
                    for f in 0..o {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * spec.stride.0 + dy) as isize - spec.padding.0 as isize;
                                let ix = (ox * spec.stride.1 + dx) as isize - spec.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ch in 0..c {
                                    let kernel_offset = ((f * kh + dy) * kw + dx) * c + ch;
                                    let weight = match spec.kind {
                                        LayerKind::Conv2d => kernel_offset,
                                        _ => (oy * ow + ox) * o * kh * kw * c + kernel_offset,
                                    };
                                    conns.push(Connection {
                                        input: (iy as usize * w + ix as usize) * c + ch,
                                        output: (oy * ow + ox) * o + f,
                                        weight,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        LayerKind::Dropout => {}
    }
    conns
}

/// Per-layer dropout masks of one sample; `None` means no dropout was applied.
pub type Masks = Vec<Option<Vec<f64>>>;

/// Extracts sample `b`'s dropout masks from a batched trace.
pub fn masks_from_trace(trace: &ForwardTrace, b: usize) -> Masks {
    trace
        .layers
        .iter()
        .map(|o| o.dropout_mask.as_ref().map(|m| m.row(b).to_vec()))
        .collect()
}

/// Single-sample activity of every layer.
#[derive(Debug, Clone)]
pub struct ReferencePass {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
}

impl ReferencePass {
    pub fn q_values(&self) -> &[f64] {
        self.pre.last().expect("nonempty network")
    }

    /// Smallest `|a|` over ReLU pre-activations.
    pub fn min_abs_relu_pre_activation(&self, net: &Network) -> f64 {
        net.layers()
            .iter()
            .zip(&self.pre)
            .filter(|(l, _)| l.spec.has_weights() && l.spec.activation == Activation::Relu)
            .flat_map(|(_, pre)| pre.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_masks(net: &Network, masks: &[Option<Vec<f64>>]) -> Result<()> {
    if masks.len() != net.layers().len() {
        return Err(Error::MaskMismatch(masks.len()));
    }
    for (i, (layer, mask)) in net.layers().iter().zip(masks).enumerate() {
        match mask {
            Some(m) if layer.spec.kind != LayerKind::Dropout || m.len() != layer.spec.out_units() => {
                return Err(Error::MaskMismatch(i))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Plain-loop forward pass of one sample with the given dropout masks.
pub fn reference_forward(net: &Network, input: &[f64], masks: &[Option<Vec<f64>>]) -> Result<ReferencePass> {
    check_masks(net, masks)?;
    let expected: usize = net.input_shape().iter().product();
    if input.len() != expected {
        return Err(Error::ShapeMismatch {
            context: "reference_forward input",
            expected: vec![expected],
            actual: vec![input.len()],
        });
    }
    let mut pass = ReferencePass {
        inputs: Vec::new(),
        pre: Vec::new(),
        act: Vec::new(),
    };
    let mut x = input.to_vec();
    for (layer, mask) in net.layers().iter().zip(masks) {
        let spec = &layer.spec;
        let (pre, act) = if spec.kind == LayerKind::Dropout {
            let act = match mask {
                Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => x.clone(),
            };
            (x.clone(), act)
        } else {
            let w = layer.weights.forward.data();
            let mut pre = vec![0.0; spec.out_units()];
            for c in connections(spec) {
                pre[c.output] += w[c.weight] * x[c.input];
            }
            let act = match spec.activation {
                Activation::Relu => pre.iter().map(|&a| a.max(0.0)).collect(),
                Activation::Linear => pre.clone(),
            };
            (pre, act)
        };
        pass.inputs.push(x);
        x = act.clone();
        pass.pre.push(pre);
        pass.act.push(act);
    }
    Ok(pass)
}

/// `d/dw sum_l e_l q_l` by the chain rule on forward weights, one sample.
pub fn chain_rule_grads(
    net: &Network,
    input: &[f64],
    masks: &[Option<Vec<f64>>],
    output_error: &[f64],
) -> Result<Vec<Tensor>> {
    let pass = reference_forward(net, input, masks)?;
    if output_error.len() != net.output_dim() {
        return Err(Error::ShapeMismatch {
            context: "chain_rule_grads output error",
            expected: vec![net.output_dim()],
            actual: vec![output_error.len()],
        });
    }
    let layers = net.layers();
    let mut grads = vec![Tensor::empty(); layers.len()];
    // derivative with respect to the current layer's activation
    let mut e_act = output_error.to_vec();
    for i in (0..layers.len()).rev() {
        let spec = &layers[i].spec;
        let x = &pass.inputs[i];
        let mut e_in = vec![0.0; x.len()];
        if spec.kind == LayerKind::Dropout {
            for (k, e) in e_in.iter_mut().enumerate() {
                let m = masks[i].as_ref().map_or(1.0, |m| m[k]);
                *e = e_act[k] * m;
            }
        } else {
            let e_pre: Vec<f64> = match spec.activation {
                Activation::Relu => pass.pre[i]
                    .iter()
                    .zip(&e_act)
                    .map(|(&a, &e)| if a > 0.0 { e } else { 0.0 })
                    .collect(),
                Activation::Linear => e_act.clone(),
            };
            let w = layers[i].weights.forward.data();
            let mut g = vec![0.0; w.len()];
            for c in connections(spec) {
                g[c.weight] += x[c.input] * e_pre[c.output];
                e_in[c.input] += w[c.weight] * e_pre[c.output];
            }
            grads[i] = Tensor::new(spec.forward_weight_shape(), g)?;
        }
        e_act = e_in;
    }
    Ok(grads)
}

/// Error backpropagation of `E = delta^2 / 2` when only the selected output
/// carries error: `e_s = dE/dq_s = -delta`, `e_l = 0` otherwise.
///
/// Returns the update direction `-dE/dw`, the quantity the Q-AGREL rule
/// produces before the learning rate is applied.
pub fn selective_backprop_grads(
    net: &Network,
    input: &[f64],
    masks: &[Option<Vec<f64>>],
    selected: usize,
    delta: f64,
) -> Result<Vec<Tensor>> {
    let l = net.output_dim();
    if selected >= l {
        return Err(Error::InvalidArgument(format!("selected {selected} >= {l}")));
    }
    let mut e = vec![0.0; l];
    e[selected] = -delta;
    let mut grads = chain_rule_grads(net, input, masks, &e)?;
    for g in &mut grads {
        g.scale(-1.0);
    }
    Ok(grads)
}

/// Central differences `(f(w + h e_i) - f(w - h e_i)) / 2h`.
pub fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, w: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step {step} must be positive")));
    }
    let mut probe = w.to_vec();
    let mut out = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        probe[i] = w[i] + step;
        let plus = f(&probe);
        probe[i] = w[i] - step;
        let minus = f(&probe);
        probe[i] = w[i];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Central differences of `loss` with respect to every forward weight.
pub fn network_finite_diff(net: &Network, loss: impl Fn(&Network) -> f64, step: f64) -> Result<Vec<Tensor>> {
    let mut probe = net.clone();
    let mut grads = Vec::with_capacity(net.layers().len());
    for (i, layer) in net.layers().iter().enumerate() {
        if !layer.spec.has_weights() {
            grads.push(Tensor::empty());
            continue;
        }
        let base = layer.weights.forward.clone();
        let g = finite_diff(
            |w| {
                probe
                    .weights_mut(i)
                    .forward
                    .data_mut()
                    .copy_from_slice(w);
                loss(&probe)
            },
            base.data(),
            step,
        )?;
        probe.weights_mut(i).forward = base.clone();
        grads.push(Tensor::new(base.shape().to_vec(), g)?);
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDiff {
    pub layer: usize,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    /// Flat index of the element with the largest relative difference.
    pub worst_index: Option<usize>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradComparison {
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    pub per_layer: Vec<LayerDiff>,
    pub passed: bool,
}

impl GradComparison {
    pub fn first_failure(&self) -> Option<&LayerDiff> {
        self.per_layer.iter().find(|d| !d.passed)
    }
}

/// Elementwise comparison. An element passes when `|a - b| <= abs_tol` or
/// `|a - b| / max(|a|, |b|) <= rel_tol`.
pub fn compare_grads(a: &[Tensor], b: &[Tensor], rel_tol: f64, abs_tol: f64) -> Result<GradComparison> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "compare_grads layer count",
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    let mut per_layer = Vec::with_capacity(a.len());
    for (layer, (ta, tb)) in a.iter().zip(b).enumerate() {
        ta.check_same_shape(tb, "compare_grads")?;
        let mut diff = LayerDiff {
            layer,
            max_abs_diff: 0.0,
            max_rel_diff: 0.0,
            worst_index: None,
            passed: true,
        };
        for (i, (&x, &y)) in ta.data().iter().zip(tb.data()).enumerate() {
            let abs = (x - y).abs();
            let scale = x.abs().max(y.abs());
            let rel = if abs == 0.0 { 0.0 } else { abs / scale };
            diff.max_abs_diff = diff.max_abs_diff.max(abs);
            if rel > diff.max_rel_diff || diff.worst_index.is_none() {
                diff.max_rel_diff = diff.max_rel_diff.max(rel);
                diff.worst_index = Some(i);
            }
            if !(abs <= abs_tol || rel <= rel_tol) {
                diff.passed = false;
            }
        }
        per_layer.push(diff);
    }
    Ok(GradComparison {
        max_abs_diff: per_layer.iter().map(|d| d.max_abs_diff).fold(0.0, f64::max),
        max_rel_diff: per_layer.iter().map(|d| d.max_rel_diff).fold(0.0, f64::max),
        passed: per_layer.iter().all(|d| d.passed),
        per_layer,
    })
}

/// Kind of the first hidden layer of a random test network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstLayer {
    FullyConnected,
    Conv,
    StridedConv,
    LocallyConnected,
}

impl FirstLayer {
    pub const ALL: [FirstLayer; 4] = [
        FirstLayer::FullyConnected,
        FirstLayer::Conv,
        FirstLayer::StridedConv,
        FirstLayer::LocallyConnected,
    ];
}

fn random_hidden(kind: FirstLayer, shape: &[usize], rng: &mut SeededRng) -> Result<LayerSpec> {
    let filters = 1 + rng.below(3);
    match kind {
        FirstLayer::FullyConnected => Ok(LayerSpec::fully_connected(
            shape,
            2 + rng.below(5),
            Activation::Relu,
        )),
        FirstLayer::Conv => {
            let k = 2 + rng.below(2);
            let p = rng.below(2);
            LayerSpec::conv2d(shape, filters, (k, k), (1, 1), (p, p))
        }
        FirstLayer::StridedConv => LayerSpec::conv2d(shape, filters, (3, 3), (2, 2), (1, 1)),
        FirstLayer::LocallyConnected => {
            let k = 2 + rng.below(2);
            let s = 1 + rng.below(2);
            let p = rng.below(2);
            LayerSpec::locally_connected(shape, filters, (k, k), (s, s), (p, p))
        }
    }
}

/// A small random network with `weighted_depth` weighted layers (output
/// included), strict reciprocity and weights in `[-0.8, 0.8]`.
pub fn random_network(rng: &mut SeededRng, first: FirstLayer, weighted_depth: usize, dropout: bool) -> Result<Network> {
    if weighted_depth < 2 {
        return Err(Error::InvalidArgument("need at least one hidden layer".into()));
    }
    let mut shape = vec![5 + rng.below(3), 5 + rng.below(3), 1 + rng.below(2)];
    let mut specs = Vec::new();
    for h in 0..weighted_depth - 1 {
        let kind = if h == 0 {
            first
        } else if shape.len() == 3 && shape[0] >= 3 && shape[1] >= 3 {
            FirstLayer::ALL[rng.below(4)]
        } else {
            FirstLayer::FullyConnected
        };
        let spec = random_hidden(kind, &shape, rng)?;
        shape = spec.out_shape.clone();
        specs.push(spec);
        if dropout && (h == 0 || rng.bernoulli(0.5)) {
            specs.push(LayerSpec::dropout(&shape, rng.uniform(0.1, 0.6))?);
        }
    }
    specs.push(LayerSpec::fully_connected(&shape, 2 + rng.below(3), Activation::Linear));
    Network::from_specs(specs, 0.8, rng)
}

/// Uniform `[0, 1]` input `[1, ...input_shape]` for `net`.
pub fn random_input(net: &Network, rng: &mut SeededRng) -> Tensor {
    let mut shape = vec![1];
    shape.extend_from_slice(net.input_shape());
    crate::tensor::uniform_init(&shape, 0.0, 1.0, rng).expect("valid range")
}
