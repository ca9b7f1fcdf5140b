//! Simultaneous multi-subject Wi-Fi sensing from channel state information.
//!
//! - [`csi`]: capture format, preprocessing and windowing.
//! - [`synth`]: synthetic multi-monitor captures with distance-weighted
//!   subject perturbations.
//! - [`nn`]: the embedding CNN, linear head, losses, optimizers and
//!   checkpoints, with hand-written backward passes.
//! - [`frel`]: meta-training, classifier-only fine-tuning, kNN baseline and
//!   evaluation.
//! - [`cascade`]: subject-then-activity detection and the proximity matrix.
//!
//! Numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod cascade;
pub mod csi;
pub mod frel;
pub mod nn;
pub mod scalar;
pub mod synth;

#[cfg(test)]
mod testutil;

pub type Capture32 = csi::CsiCapture<f32>;
pub type Capture64 = csi::CsiCapture<f64>;
pub type Window32 = csi::Window<f32>;
pub type Window64 = csi::Window<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type EmbeddingNet32 = nn::EmbeddingNet<f32>;
pub type EmbeddingNet64 = nn::EmbeddingNet<f64>;
pub type Classifier32 = nn::Classifier<f32>;
pub type Classifier64 = nn::Classifier<f64>;
pub type Benchmark32 = synth::Benchmark<f32>;
pub type Benchmark64 = synth::Benchmark<f64>;
