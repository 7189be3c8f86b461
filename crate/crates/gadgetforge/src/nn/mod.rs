//! Desk-scale neural classifiers and the numerics underneath them.
//!
//! The stack is deliberately small and self-contained:
//!
//! * [`tensor`] — dense row-major f64 matrices.
//! * [`ops`] — pure forward-pass building blocks (attention, recurrent
//!   steps, classification heads, cross-entropy) with typed shape errors.
//! * [`graph`] — an eager tape that records the same operations and plays
//!   them backwards for exact reverse-mode gradients.
//! * [`models`] — the three classifier families (bidirectional LSTM,
//!   bidirectional GRU, transformer encoder) behind one [`Classifier`]
//!   trait, built from the graph ops so training gets gradients for free.
//! * [`checkpoint`] — a small versioned binary format for named parameter
//!   tensors plus the config needed to rebuild the model around them.
//!
//! Everything is deterministic given a seed: parameter init draws from a
//! counter-free seeded stream in a fixed order, and dropout masks come from
//! an rng the caller controls.

pub mod checkpoint;
pub mod graph;
pub mod models;
pub mod ops;
pub mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use models::{
    build_classifier, model_from_checkpoint, model_to_checkpoint, Classifier, HeadKind,
    ModelConfig, ModelFamily, PoolKind,
};
pub use ops::{
    bigru_forward, bilstm_forward, cross_entropy, head_forward, lstm_step, multi_head_attention,
    positional_encoding, scaled_dot_attention, softmax_rows, AttentionParams, GruParams, HeadLayer,
    HeadParams, HeadSpec, LstmParams, LstmState,
};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors surfaced by the numeric layer.
#[derive(Debug, Error)]
pub enum NnError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// Sinusoidal position tables interleave sin/cos pairs and need an even
    /// width.
    #[error("model width must be even for sinusoidal positions, got {0}")]
    OddModelDim(usize),
    /// A recurrent pass was asked to run over zero usable steps.
    #[error("sequence has no usable steps")]
    EmptySequence,
    /// The gold label does not index a valid class.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    /// Model hyper-parameters are inconsistent with each other.
    #[error("inconsistent model configuration: {0}")]
    ConfigMismatch(String),
}
