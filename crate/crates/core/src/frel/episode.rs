use rand::seq::index::sample;
use rand::Rng;

use super::{FrelError, Labeled};

/// An N-way K-shot task: exactly `k_shots` examples from each of `n_ways`
/// classes out of a label space of `class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<X> {
    examples: Vec<Labeled<X>>,
    n_ways: usize,
    k_shots: usize,
    class_count: usize,
}

impl<X> Episode<X> {
    pub fn new(examples: Vec<Labeled<X>>, n_ways: usize, k_shots: usize, class_count: usize) -> Result<Self, FrelError> {
        let mut counts = vec![0usize; class_count];
        for e in &examples {
            if e.label >= class_count {
                return Err(FrelError::InvalidDataset(format!("label {} outside [0, {class_count})", e.label)));
            }
            counts[e.label] += 1;
        }
        let ways = counts.iter().filter(|&&c| c > 0).count();
        if ways != n_ways || counts.iter().any(|&c| c != 0 && c != k_shots) {
            return Err(FrelError::InvalidDataset(format!("episode is not {n_ways}-way {k_shots}-shot")));
        }
        Ok(Self { examples, n_ways, k_shots, class_count })
    }

    pub fn examples(&self) -> &[Labeled<X>] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Labeled<X>> {
        self.examples
    }

    pub fn n_ways(&self) -> usize {
        self.n_ways
    }

    pub fn k_shots(&self) -> usize {
        self.k_shots
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// `m = N · K`.
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Concatenates tasks into one flat dataset, in task order.
pub fn merge_tasks<X>(tasks: Vec<Episode<X>>) -> Result<Vec<Labeled<X>>, FrelError> {
    if let Some(first) = tasks.first() {
        let c = first.class_count;
        if let Some(t) = tasks.iter().find(|t| t.class_count != c) {
            return Err(FrelError::LabelSpaceMismatch(c, t.class_count));
        }
    }
    Ok(tasks.into_iter().flat_map(Episode::into_examples).collect())
}

/// Indices into `labels` for one episode over `classes`: `k_shots` per class,
/// uniformly without replacement. Output is grouped by class in the order given.
pub fn sample_episode_indices<R: Rng + ?Sized>(
    labels: &[usize],
    classes: &[usize],
    k_shots: usize,
    rng: &mut R,
) -> Result<Vec<usize>, FrelError> {
    let mut out = Vec::with_capacity(classes.len() * k_shots);
    for &class in classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k_shots {
            return Err(FrelError::InsufficientShots { class, available: members.len(), needed: k_shots });
        }
        out.extend(sample(rng, members.len(), k_shots).into_iter().map(|j| members[j]));
    }
    Ok(out)
}

/// Samples an N-way K-shot episode from `data`; `classes` are the N ways.
pub fn sample_episode<X: Clone, R: Rng + ?Sized>(
    data: &[Labeled<X>],
    classes: &[usize],
    k_shots: usize,
    class_count: usize,
    rng: &mut R,
) -> Result<Episode<X>, FrelError> {
    let labels: Vec<usize> = data.iter().map(|l| l.label).collect();
    let idx = sample_episode_indices(&labels, classes, k_shots, rng)?;
    Episode::new(idx.into_iter().map(|i| data[i].clone()).collect(), classes.len(), k_shots, class_count)
}
