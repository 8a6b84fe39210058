//! The five phases of a Q-AGREL trial.
//!
//! 1. forward pass to Q-values ([`Network::forward_pass`])
//! 2. max-Boltzmann action selection ([`select_action`])
//! 3. feedback from the selected output unit only ([`Network::backward_feedback`])
//! 4. global reward prediction error `delta = r - q_s` ([`compute_rpe`])
//! 5. four-factor synaptic update ([`Network::trial_grads`], [`Network::apply_grads`])

use crate::layers::{
    self, apply_grad, layer_feedback, layer_forward, layer_update_grads, Activation, LayerKind,
    LayerOutput, LayerSpec, LayerWeights,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: LayerWeights,
}

/// An ordered stack of layers ending in a linear fully connected Q-value layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    version: u64,
}

/// Per-layer forward quantities for one batch of trials.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor,
    pub layers: Vec<LayerOutput>,
    version: u64,
}

impl ForwardTrace {
    /// Raw linear outputs `[B, L]`.
    pub fn q_values(&self) -> &Tensor {
        &self.layers.last().expect("network has layers").pre_activation
    }

    pub fn batch_size(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Activity presynaptic to layer `i`.
    pub fn layer_input(&self, i: usize) -> &Tensor {
        if i == 0 {
            &self.input
        } else {
            &self.layers[i - 1].activation
        }
    }
}

/// Feedback-unit activities: `fb[i]` is the feedback arriving at layer `i`'s
/// output units, already gated by that layer's gate.
#[derive(Debug, Clone)]
pub struct FeedbackTrace {
    pub fb: Vec<Tensor>,
    version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub selected: usize,
    /// `true` when the argmax branch was taken, `false` for a Boltzmann draw.
    pub greedy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutcome {
    pub selected: usize,
    pub z: Tensor,
    pub greedy: bool,
    pub reward: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialStats {
    /// Fraction of units with a nonzero gate, per layer.
    pub active_fraction: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub grads: Vec<Tensor>,
    pub outcome: ActionOutcome,
    pub stats: TrialStats,
}

/// A batch of independent trials; `grads` is the sum of the per-trial grads.
#[derive(Debug, Clone)]
pub struct BatchTrial {
    pub grads: Vec<Tensor>,
    pub outcomes: Vec<ActionOutcome>,
    pub stats: TrialStats,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::InvalidNetwork("no layers".into()))?;
        if last.spec.kind != LayerKind::FullyConnected || last.spec.activation != Activation::Linear {
            return Err(Error::InvalidNetwork(
                "final layer must be fully connected with linear output".into(),
            ));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.spec.validate()?;
            if layer.spec.has_weights() {
                layer
                    .weights
                    .forward
                    .expect_shape(&layer.spec.forward_weight_shape(), "network forward weights")?;
                layer
                    .weights
                    .feedback
                    .expect_shape(&layer.spec.feedback_weight_shape(), "network feedback weights")?;
            }
            if i + 1 < layers.len() && layer.spec.activation != Activation::Relu && layer.spec.has_weights() {
                return Err(Error::InvalidNetwork(format!("hidden layer {i} must use ReLU")));
            }
            if let Some(next) = layers.get(i + 1) {
                let chains = if next.spec.kind == LayerKind::FullyConnected {
                    next.spec.in_units() == layer.spec.out_units()
                } else {
                    next.spec.in_shape == layer.spec.out_shape
                };
                if !chains {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i} output {:?} does not feed layer {} input {:?}",
                        layer.spec.out_shape,
                        i + 1,
                        next.spec.in_shape
                    )));
                }
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// Uniform init in `[-half_width, half_width]` with strict reciprocity.
    pub fn from_specs(specs: Vec<LayerSpec>, half_width: f64, rng: &mut SeededRng) -> Result<Self> {
        let layers = specs
            .into_iter()
            .map(|spec| {
                let weights = LayerWeights::init_reciprocal(&spec, half_width, rng)?;
                Ok(Layer { spec, weights })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to one layer's weights. Invalidates outstanding traces.
    pub fn weights_mut(&mut self, i: usize) -> &mut LayerWeights {
        self.version += 1;
        &mut self.layers[i].weights
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].spec.in_shape
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.spec.out_units()).unwrap_or(0)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.forward.len()).sum()
    }

    /// Hidden-unit counts of every weighted layer except the output.
    pub fn hidden_units(&self) -> Vec<usize> {
        let n = self.layers.len();
        self.layers[..n - 1]
            .iter()
            .filter(|l| l.spec.has_weights())
            .map(|l| l.spec.out_units())
            .collect()
    }

    fn layer_input_shape(&self, i: usize, batch: usize) -> Vec<usize> {
        let mut s = vec![batch];
        s.extend_from_slice(&self.layers[i].spec.in_shape);
        s
    }

    /// Forward pass on `[B, ...input_shape]`; dropout masks are sampled iff `training`.
    pub fn forward_pass(&self, input: &Tensor, rng: &mut SeededRng, training: bool) -> Result<ForwardTrace> {
        let shape = input.shape();
        if shape.is_empty() || &shape[1..] != self.input_shape() {
            return Err(Error::ShapeMismatch {
                context: "forward_pass input",
                expected: self.layer_input_shape(0, shape.first().copied().unwrap_or(1)),
                actual: shape.to_vec(),
            });
        }
        let batch = shape[0];
        let mut outputs: Vec<LayerOutput> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = {
                let x = match outputs.last() {
                    None => input.clone(),
                    Some(prev) => prev
                        .activation
                        .clone()
                        .reshape(&self.layer_input_shape(i, batch))?,
                };
                layer_forward(&layer.spec, &layer.weights, &x, rng, training)?
            };
            outputs.push(out);
        }
        Ok(ForwardTrace {
            input: input.clone(),
            layers: outputs,
            version: self.version,
        })
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.version != self.version {
            return Err(Error::StaleTrace {
                trace: trace.version,
                network: self.version,
            });
        }
        if trace.layers.len() != self.layers.len() {
            return Err(Error::TraceMismatch(format!(
                "trace has {} layers, network {}",
                trace.layers.len(),
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Propagates the one-hot `z` (`[B, L]`) down the feedback network.
    ///
    /// Only the selected output unit emits feedback. Each feedback unit is
    /// silent unless its feedforward partner is active.
    pub fn backward_feedback(&self, trace: &ForwardTrace, z: &Tensor) -> Result<FeedbackTrace> {
        self.check_trace(trace)?;
        let top = &trace.layers[self.layers.len() - 1];
        z.expect_shape(top.gate.shape(), "backward_feedback z")?;
        let n = self.layers.len();
        let mut fb = vec![Tensor::empty(); n];
        fb[n - 1] = z.hadamard(&top.gate)?;
        for i in (1..n).rev() {
            let layer = &self.layers[i];
            let out = &trace.layers[i];
            let below = layer_feedback(
                &layer.spec,
                &layer.weights,
                &fb[i],
                &out.gate,
                out.dropout_mask.as_ref(),
            )?;
            let gate_below = &trace.layers[i - 1].gate;
            fb[i - 1] = below.reshape(gate_below.shape())?.hadamard(gate_below)?;
        }
        Ok(FeedbackTrace {
            fb,
            version: trace.version,
        })
    }

    /// Four-factor update directions for every layer, summed over the batch.
    ///
    /// Each entry depends only on presynaptic activity, the postsynaptic gate,
    /// the postsynaptic feedback activity and the trial's `delta`. Dropout
    /// layers get an empty tensor.
    pub fn trial_grads(&self, trace: &ForwardTrace, fb: &FeedbackTrace, delta: &[f64]) -> Result<Vec<Tensor>> {
        self.check_trace(trace)?;
        if fb.version != trace.version || fb.fb.len() != trace.layers.len() {
            return Err(Error::TraceMismatch(
                "feedback trace does not belong to this forward trace".into(),
            ));
        }
        if delta.len() != trace.batch_size() {
            return Err(Error::TraceMismatch(format!(
                "{} deltas for a batch of {}",
                delta.len(),
                trace.batch_size()
            )));
        }
        let batch = trace.batch_size();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                if !layer.spec.has_weights() {
                    return Ok(Tensor::empty());
                }
                let x = trace
                    .layer_input(i)
                    .clone()
                    .reshape(&self.layer_input_shape(i, batch))?;
                let out = &trace.layers[i];
                layer_update_grads(&layer.spec, &x, &out.gate, &fb.fb[i], delta)
            })
            .collect()
    }

    /// `w += alpha * grad` on forward weights and the paired feedback weights.
    pub fn apply_grads(&mut self, grads: &[Tensor], alpha: f64) -> Result<()> {
        self.check_grads(grads)?;
        self.version += 1;
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            apply_grad(&layer.spec, &mut layer.weights, g, alpha)?;
        }
        Ok(())
    }

    /// `w += alpha * grad` on forward weights only.
    pub fn apply_forward_grads(&mut self, grads: &[Tensor], alpha: f64) -> Result<()> {
        self.check_grads(grads)?;
        self.version += 1;
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            if layer.spec.has_weights() {
                layer.weights.forward.add_scaled(g, alpha)?;
            }
        }
        Ok(())
    }

    fn check_grads(&self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} grads for {} layers",
                grads.len(),
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Largest forward/feedback pairing difference over all layers.
    pub fn reciprocity_gap(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| layers::reciprocity_gap(&l.spec, &l.weights))
            .fold(0.0, f64::max)
    }

    /// All five phases for a batch of independent trials.
    ///
    /// Every sample selects its own action and gets its own `delta`; the
    /// returned grads are the sum over trials (no learning rate applied).
    pub fn run_batch(&self, inputs: &Tensor, labels: &[usize], epsilon: f64, rng: &mut SeededRng) -> Result<BatchTrial> {
        let trace = self.forward_pass(inputs, rng, true)?;
        let batch = trace.batch_size();
        if labels.len() != batch {
            return Err(Error::InvalidArgument(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        let l = self.output_dim();
        let q = trace.q_values();
        let mut z = Tensor::zeros(&[batch, l]);
        let mut outcomes = Vec::with_capacity(batch);
        for (b, &label) in labels.iter().enumerate() {
            if label >= l {
                return Err(Error::InvalidArgument(format!("label {label} >= {l} actions")));
            }
            let row = q.row(b);
            let sel = select_action(row, epsilon, rng)?;
            let reward = compute_reward(sel.selected, label);
            let delta = compute_rpe(reward, row[sel.selected]);
            z.data_mut()[b * l + sel.selected] = 1.0;
            let mut onehot = vec![0.0; l];
            onehot[sel.selected] = 1.0;
            outcomes.push(ActionOutcome {
                selected: sel.selected,
                z: Tensor::vector(onehot),
                greedy: sel.greedy,
                reward,
                delta,
            });
        }
        let fb = self.backward_feedback(&trace, &z)?;
        let deltas: Vec<f64> = outcomes.iter().map(|o| o.delta).collect();
        let grads = self.trial_grads(&trace, &fb, &deltas)?;
        let stats = TrialStats {
            active_fraction: trace
                .layers
                .iter()
                .map(|o| o.gate.sum() / o.gate.len().max(1) as f64)
                .collect(),
        };
        Ok(BatchTrial {
            grads,
            outcomes,
            stats,
        })
    }

    /// One trial on a single sample shaped like the network input (with or
    /// without a leading batch axis of 1).
    pub fn run_trial(&self, input: &Tensor, label: usize, epsilon: f64, rng: &mut SeededRng) -> Result<TrialResult> {
        let input = if input.shape() == self.input_shape() {
            input.clone().reshape(&self.layer_input_shape(0, 1))?
        } else {
            input.clone()
        };
        let mut batch = self.run_batch(&input, &[label], epsilon, rng)?;
        if batch.outcomes.len() != 1 {
            return Err(Error::InvalidArgument("run_trial takes a single sample".into()));
        }
        Ok(TrialResult {
            grads: batch.grads,
            outcome: batch.outcomes.pop().expect("one outcome"),
            stats: batch.stats,
        })
    }

    /// Greedy class predictions with dropout disabled.
    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        // eval mode never draws from the generator
        let mut rng = SeededRng::new(0);
        let trace = self.forward_pass(inputs, &mut rng, false)?;
        let q = trace.q_values();
        Ok((0..trace.batch_size()).map(|b| argmax(q.row(b))).collect())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Max-Boltzmann controller: argmax with probability `1 - epsilon`, otherwise
/// a draw from `softmax(q)`.
pub fn select_action(q: &[f64], epsilon: f64, rng: &mut SeededRng) -> Result<Selection> {
    if q.is_empty() {
        return Err(Error::Empty("select_action"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("q-values"));
    }
    if rng.next_f64() >= epsilon {
        return Ok(Selection {
            selected: argmax(q),
            greedy: true,
        });
    }
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = q.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.next_f64() * total;
    let mut selected = q.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            selected = i;
            break;
        }
        u -= w;
    }
    Ok(Selection {
        selected,
        greedy: false,
    })
}

/// Direct reward: 1 for the correct class, 0 otherwise.
pub fn compute_reward(selected: usize, label: usize) -> f64 {
    if selected == label {
        1.0
    } else {
        0.0
    }
}

/// Reward prediction error `delta = r - q_s`.
pub fn compute_rpe(reward: f64, q_selected: f64) -> f64 {
    reward - q_selected
}
