//! Reverse-mode training engine for the window embedding CNN and its linear
//! classifier head.
//!
//! The network is fixed: four 3×3/64-channel convolutions, each followed by
//! batch normalization and ReLU, with 2×2 max pooling after the first three
//! and global average pooling after the last, giving a 64-dimensional
//! embedding. A single fully-connected layer maps embeddings to class logits.
//!
//! Gradients are hand-derived per layer and recorded on an explicit [`Tape`]
//! rather than through a general autodiff graph.

mod checkpoint;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{
    bn_relu_max_pool, global_avg_pool, global_avg_pool_backward, max_pool_2x2, max_pool_2x2_backward, BatchNorm, BnCache,
    Classifier, ClassifierGrads, Conv3x3,
};
pub use loss::cross_entropy;
pub use network::{
    backward, backward_embedding, build_embedding, forward, BlockGrads, ConvBlock, EmbeddingGrads, EmbeddingNet, EmbeddingTape,
    Gradients, Tape, EMBEDDING_DIM, INPUT_CHANNELS,
};
pub use optim::{adam_step, plain_gd_step, AdamState, Optimizer, OptimizerKind};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input {rows}×{cols} too small: at least 8×8 is needed for three 2×2 pools")]
    ShapeTooSmall { rows: usize, cols: usize },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("non-finite activation after {stage}")]
    NonFiniteActivation { stage: &'static str },
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("tape does not match this forward pass: {0}")]
    TapeMismatch(String),
    #[error("batch statistics need at least 2 examples in train mode, got {0}")]
    BatchTooSmall(usize),
    #[error("classifier needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Batch-norm behaviour of the embedding network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated with momentum.
    Train,
    /// Frozen running statistics; forward passes mutate nothing.
    Inference,
}

/// Anything exposing its trainable parameters as flat blobs in a fixed order.
pub trait ParamSet<T> {
    fn blobs(&self) -> Vec<&[T]>;
    fn blobs_mut(&mut self) -> Vec<&mut [T]>;

    fn blob_lens(&self) -> Vec<usize> {
        self.blobs().iter().map(|b| b.len()).collect()
    }

    fn param_count(&self) -> usize {
        self.blobs().iter().map(|b| b.len()).sum()
    }
}
