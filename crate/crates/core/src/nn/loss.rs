use crate::scalar::Real;

use super::{NnError, Tensor};

/// Mean softmax cross-entropy over a `B × C` logit batch.
///
/// Returns the loss and its gradient with respect to the logits. Each gradient
/// row is `(softmax - onehot) / B`, so it sums to zero.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>), NnError> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(NnError::ShapeMismatch { expected: vec![labels.len(), 0], actual: shape.to_vec() });
    }
    let (batch, classes) = (shape[0], shape[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::LabelOutOfRange { label, classes });
    }
    let inv_b = T::one() / T::lit(batch as f64);
    let mut grad = vec![T::zero(); batch * classes];
    let mut total = T::zero();
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        total += sum.ln() + max - row[label];
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (gi, e) in g.iter_mut().zip(&exps) {
            *gi = *e / sum * inv_b;
        }
        g[label] -= inv_b;
    }
    Ok((total * inv_b, Tensor::from_vec(&[batch, classes], grad)?))
}
