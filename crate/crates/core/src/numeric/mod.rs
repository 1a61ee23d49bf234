//! Minimal dense-network numerics: MLPs with exact gradients, Adam, Polyak
//! averaging, the squashed-Gaussian policy head and checkpoints.

mod adam;
pub mod checkpoint;
mod mlp;
pub mod squashed;

pub use adam::{adam_step, AdamConfig, OptState, ScalarAdam};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use mlp::{polyak, Activation, ForwardCache, Layer, ParamSet};
pub use squashed::{mean_action, nll_batch, sample_squashed_gaussian, squashed_log_prob, PolicyOutput, SquashedBatch};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl NumericError {
    pub(crate) fn shape(context: impl Into<String>, expected: usize, found: usize) -> Self {
        NumericError::ShapeMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}
