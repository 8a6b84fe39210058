use super::{LayerOutput, LayerSpec};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::Result;

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` so that the
/// evaluation pass needs no rescaling.
pub(super) fn forward(spec: &LayerSpec, input: &Tensor, rng: &mut SeededRng, training: bool) -> LayerOutput {
    if !training {
        return LayerOutput {
            pre_activation: input.clone(),
            activation: input.clone(),
            gate: Tensor::ones(input.shape()),
            dropout_mask: None,
        };
    }
    let keep = 1.0 - spec.drop_rate;
    let scale = 1.0 / keep;
    let data = (0..input.len())
        .map(|_| if rng.bernoulli(keep) { scale } else { 0.0 })
        .collect();
    let mask = Tensor::new(input.shape().to_vec(), data).expect("length matches shape");
    let activation = input.hadamard(&mask).expect("mask built from input shape");
    let gate = mask.map(|m| if m > 0.0 { 1.0 } else { 0.0 });
    LayerOutput {
        pre_activation: input.clone(),
        activation,
        gate,
        dropout_mask: Some(mask),
    }
}

pub(super) fn adjoint(signal: Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    match mask {
        Some(m) => signal.hadamard(m),
        None => Ok(signal),
    }
}
