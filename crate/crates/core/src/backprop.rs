//! Supervised baseline: softmax + cross-entropy trained by error backpropagation
//! through the forward weights. The feedback network is not used.

use crate::layers::{layer_backprop_error, layer_weight_grads};
use crate::network::{ForwardTrace, Network};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Cross-entropy of `softmax(logits)` against `label` and its gradient
/// `softmax(logits) - one_hot(label)`. Uses the log-sum-exp shift by `max`.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax_xent"));
    }
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} >= {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = max + total.ln() - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Loss gradients `dL/dw` for every layer, summed over the batch, given
/// `grad_logits = dL/dq` (`[B, L]`). Dropout layers get an empty tensor.
pub fn backprop_grads(net: &Network, trace: &ForwardTrace, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
    if trace.version() != net.version() {
        return Err(Error::StaleTrace {
            trace: trace.version(),
            network: net.version(),
        });
    }
    let layers = net.layers();
    if trace.layers.len() != layers.len() {
        return Err(Error::TraceMismatch("layer count differs".into()));
    }
    grad_logits.expect_shape(trace.q_values().shape(), "backprop_grads grad_logits")?;
    let batch = trace.batch_size();
    let mut grads = vec![Tensor::empty(); layers.len()];
    let mut err = grad_logits.clone();
    for i in (0..layers.len()).rev() {
        let layer = &layers[i];
        let out = &trace.layers[i];
        if layer.spec.has_weights() {
            let mut x_shape = vec![batch];
            x_shape.extend_from_slice(&layer.spec.in_shape);
            let x = trace.layer_input(i).clone().reshape(&x_shape)?;
            let post = err.hadamard(&out.gate)?;
            grads[i] = layer_weight_grads(&layer.spec, &x, &post)?;
        }
        if i > 0 {
            let below = layer_backprop_error(
                &layer.spec,
                &layer.weights,
                &err,
                &out.gate,
                out.dropout_mask.as_ref(),
            )?;
            err = below.reshape(trace.layers[i - 1].activation.shape())?;
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone)]
pub struct SupervisedBatch {
    /// Summed loss gradients; descend with `w -= alpha / B * grad`.
    pub grads: Vec<Tensor>,
    pub total_loss: f64,
    pub correct: usize,
}

/// Forward pass (with dropout), softmax cross-entropy and backprop for a batch.
pub fn supervised_batch(net: &Network, inputs: &Tensor, labels: &[usize], rng: &mut SeededRng) -> Result<SupervisedBatch> {
    let trace = net.forward_pass(inputs, rng, true)?;
    let batch = trace.batch_size();
    if labels.len() != batch {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let q = trace.q_values();
    let mut grad_logits = Tensor::zeros(q.shape());
    let l = net.output_dim();
    let mut total_loss = 0.0;
    let mut correct = 0;
    for (b, &label) in labels.iter().enumerate() {
        let (loss, g) = softmax_xent(q.row(b), label)?;
        total_loss += loss;
        if crate::network::argmax(q.row(b)) == label {
            correct += 1;
        }
        grad_logits.data_mut()[b * l..(b + 1) * l].copy_from_slice(&g);
    }
    let grads = backprop_grads(net, &trace, &grad_logits)?;
    Ok(SupervisedBatch {
        grads,
        total_loss,
        correct,
    })
}
