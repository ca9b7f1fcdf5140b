//! Few-shot machinery: labelled datasets and episodes, joint meta-training of
//! the embedding network and classifier, classifier-only fine-tuning, the kNN
//! embedding baseline and evaluation.

mod episode;
mod eval;
mod knn;
mod train;

pub use episode::{merge_tasks, sample_episode, sample_episode_indices, Episode};
pub use eval::{argmax, evaluate, CnnPredictor, Evaluation, KnnPredictor, LinearPredictor, Predictor};
pub use knn::knn_classify;
pub use train::{
    embed_windows, fine_tune, fine_tune_embedded, mean_loss, meta_train, stack_windows, EpochMetrics, FineTuneReport,
};

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{NnError, OptimizerKind};

#[derive(Debug, Error)]
pub enum FrelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("tasks disagree on the label space ({0} vs {1} classes)")]
    LabelSpaceMismatch(usize, usize),
    #[error("class {class} has {available} examples, {needed} shots requested")]
    InsufficientShots { class: usize, available: usize, needed: usize },
    #[error("kNN support set is empty")]
    EmptySupport,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("embedding network must be in inference mode")]
    NotFrozen,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

/// One example with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled<X> {
    pub x: X,
    pub label: usize,
}

impl<X> Labeled<X> {
    pub fn new(x: X, label: usize) -> Self {
        Self { x, label }
    }
}

/// Held-out split whose reads are counted, so tests can prove it stayed
/// untouched until evaluation.
#[derive(Debug, Default)]
pub struct TestSet<X> {
    items: Vec<Labeled<X>>,
    reads: AtomicUsize,
}

impl<X> TestSet<X> {
    pub fn new(items: Vec<Labeled<X>>) -> Self {
        Self { items, reads: AtomicUsize::new(0) }
    }

    /// The examples; every call is logged.
    pub fn read(&self) -> &[Labeled<X>] {
        self.reads.fetch_add(1, Ordering::SeqCst);
        &self.items
    }

    pub fn read_count(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Reads every example once and maps it, e.g. to its embedding.
    pub fn map<Y, E>(&self, f: impl FnOnce(&[Labeled<X>]) -> Result<Vec<Y>, E>) -> Result<TestSet<Y>, E> {
        let items = self.read();
        let labels: Vec<usize> = items.iter().map(|l| l.label).collect();
        let ys = f(items)?;
        Ok(TestSet::new(ys.into_iter().zip(labels).map(|(x, label)| Labeled { x, label }).collect()))
    }
}

/// `D^train`, `D^tune` and `D^test` for one monitor.
#[derive(Debug)]
pub struct MiniDataset<X> {
    pub train: Vec<Labeled<X>>,
    pub tune: Vec<Labeled<X>>,
    test: TestSet<X>,
    class_count: usize,
}

impl<X> MiniDataset<X> {
    /// Every label must be below `class_count` and every class must appear in
    /// the tune split.
    pub fn new(
        train: Vec<Labeled<X>>,
        tune: Vec<Labeled<X>>,
        test: Vec<Labeled<X>>,
        class_count: usize,
    ) -> Result<Self, FrelError> {
        if let Some(l) = train.iter().chain(&tune).chain(&test).find(|l| l.label >= class_count) {
            return Err(FrelError::InvalidDataset(format!("label {} outside [0, {class_count})", l.label)));
        }
        let counts = class_counts(&tune, class_count);
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(FrelError::InvalidDataset(format!("class {c} missing from the tune split")));
        }
        Ok(Self { train, tune, test: TestSet::new(test), class_count })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn test(&self) -> &TestSet<X> {
        &self.test
    }
}

pub fn class_counts<X>(data: &[Labeled<X>], class_count: usize) -> Vec<usize> {
    let mut counts = vec![0; class_count];
    for l in data {
        counts[l.label] += 1;
    }
    counts
}

/// Learning rates, shot counts and epoch budgets of both phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrelHyper {
    /// Meta-training learning rate.
    pub alpha: f64,
    /// Fine-tuning learning rate.
    pub beta: f64,
    /// Shots per class in fine-tuning episodes and kNN supports.
    pub k_shots: usize,
    /// Shots per class in each meta-training task.
    pub meta_shots: usize,
    pub meta_epochs: usize,
    pub tune_epochs: usize,
    pub episodes_per_epoch: usize,
    pub optimizer: OptimizerKind,
    /// Start fine-tuning from the meta-trained head instead of a fresh one.
    pub warm_start: bool,
    pub knn_neighbors: usize,
    pub seed: u64,
}

impl Default for FrelHyper {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.01,
            k_shots: 5,
            meta_shots: 5,
            meta_epochs: 30,
            tune_epochs: 20,
            episodes_per_epoch: 10,
            optimizer: OptimizerKind::Adam,
            warm_start: false,
            knn_neighbors: 5,
            seed: 0,
        }
    }
}

impl FrelHyper {
    pub fn validate(&self) -> Result<(), FrelError> {
        let bad = |m: &str| Err(FrelError::InvalidHyper(m.into()));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) || !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("learning rates must be finite and non-negative");
        }
        if self.k_shots == 0 || self.meta_shots == 0 {
            return bad("shot counts must be at least 1");
        }
        if self.knn_neighbors == 0 {
            return bad("knn_neighbors must be at least 1");
        }
        Ok(())
    }
}

/// Independent RNG stream `stream` under the root `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids of the training phases.
pub mod streams {
    pub const META: u64 = 1;
    pub const HEAD_INIT: u64 = 2;
    pub const TUNE: u64 = 3;
    pub const KNN: u64 = 4;
    pub const NET_INIT: u64 = 5;
}
