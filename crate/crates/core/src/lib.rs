//! Q-AGREL: attention-gated reinforcement learning for deep ReLU networks.
//!
//! Every synapse changes by the product of four locally available factors:
//! presynaptic activity, the postsynaptic ReLU gate, the activity of the
//! postsynaptic feedback unit, and a global reward prediction error.
//!
//! - [`tensor`] and [`rng`]: dense f64 tensors and seeded randomness
//! - [`layers`]: forward, feedback and update kernels per layer kind
//! - [`network`]: the five-phase trial (forward, select, feedback, RPE, update)
//! - [`backprop`]: the supervised softmax/cross-entropy baseline
//! - [`oracle`]: naive reference implementation used to check all of the above
//!
//! Activations carry a leading batch axis. A single trial is a batch of one.

mod error;
mod gemm;

pub mod backprop;
pub mod layers;
pub mod network;
pub mod oracle;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use layers::{Activation, LayerKind, LayerOutput, LayerSpec, LayerWeights};
pub use network::{
    compute_reward, compute_rpe, select_action, ActionOutcome, BatchTrial, FeedbackTrace,
    ForwardTrace, Layer, Network, Selection, TrialResult, TrialStats,
};

pub use rng::SeededRng;
pub use tensor::Tensor;
