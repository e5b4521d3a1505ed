//! A small pre-norm decoder-only transformer with residual-stream hooks,
//! attention capture, sampling, training and weight orthogonalization.
//!
//! "Residual stream at layer `l`" always means the stream after block `l`.

pub mod activations;
pub mod forward;
pub mod generate;
pub mod io;
mod ops;
pub mod ortho;
pub mod params;
pub mod train;

pub use activations::{
    capture_all_positions, capture_final_token_residuals, capture_final_token_residuals_multi,
    read_activation_store, write_activation_store, ActivationRecord, Label,
};
pub use forward::{
    attention_weights, forward, AttentionTrace, Capture, Decoder, ForwardOutput, HookKind,
    HookPositions, HookSpec,
};
pub use generate::{argmax, generate, SamplingConfig};
pub use io::{read_checkpoint, write_checkpoint};
pub use ortho::{check_unit, max_write_component, orthogonalize_checkpoint, UNIT_TOLERANCE};
pub use params::{Block, Checkpoint, ModelConfig, Provenance, Weights};
pub use train::{
    accumulate_gradients, batch_loss, batch_loss_and_grad, fine_tune, train, TrainLog,
    TrainOptions, TrainingSequence,
};
