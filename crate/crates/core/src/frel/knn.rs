use std::cmp::Ordering;

use crate::scalar::Real;

use super::{FrelError, Labeled};

fn euclidean<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>().sqrt()
}

/// Plurality vote among the `k` nearest supports (Euclidean).
///
/// Neighbours are ranked by `(distance, label)`. A tied vote goes to the
/// label with the smaller summed neighbour distance, then the smaller label.
pub fn knn_classify<T: Real>(support: &[Labeled<Vec<T>>], query: &[T], k: usize) -> Result<usize, FrelError> {
    if support.is_empty() {
        return Err(FrelError::EmptySupport);
    }
    if k == 0 || k > support.len() {
        return Err(FrelError::InvalidHyper(format!("k = {k} with {} supports", support.len())));
    }
    let mut ranked: Vec<(f64, usize)> = support.iter().map(|s| (euclidean(&s.x, query), s.label)).collect();
    let key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, key);
    }
    let nearest = &mut ranked[..k];
    // ascending distance inside each label, so tied sums round identically
    nearest.sort_unstable_by(|a, b| a.1.cmp(&b.1).then(a.0.total_cmp(&b.0)));

    let mut best: Option<(usize, f64, usize)> = None;
    for group in nearest.chunk_by(|a, b| a.1 == b.1) {
        let cand = (group.len(), group.iter().map(|n| n.0).sum::<f64>(), group[0].1);
        let better = match best {
            None => true,
            Some((votes, dist, _)) => match cand.0.cmp(&votes) {
                Ordering::Greater => true,
                Ordering::Less => false,
                // labels arrive ascending, so equal distances keep the smaller label
                Ordering::Equal => cand.1 < dist,
            },
        };
        if better {
            best = Some(cand);
        }
    }
    Ok(best.expect("k ≥ 1").2)
}
