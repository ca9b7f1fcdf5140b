use crate::csi::Window;
use crate::nn::{Classifier, EmbeddingNet, NnError};
use crate::scalar::Real;

use super::train::stack_windows;
use super::{knn_classify, FrelError, Labeled, TestSet};

/// Index of the largest value; ties go to the lower index.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Anything that maps inputs to class indices.
pub trait Predictor<X> {
    fn predict_batch(&self, xs: &[&X]) -> Result<Vec<usize>, FrelError>;
}

/// Frozen embedding network plus linear head, on raw windows.
pub struct CnnPredictor<'a, T> {
    pub net: &'a EmbeddingNet<T>,
    pub head: &'a Classifier<T>,
}

impl<T: Real> Predictor<Window<T>> for CnnPredictor<'_, T> {
    fn predict_batch(&self, xs: &[&Window<T>]) -> Result<Vec<usize>, FrelError> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(64) {
            let z = self.net.embed(&stack_windows(chunk)?)?;
            let logits = self.head.forward(z.data(), chunk.len());
            out.extend(logits.chunks_exact(self.head.classes).map(argmax));
        }
        Ok(out)
    }
}

/// Linear head on precomputed embeddings.
pub struct LinearPredictor<'a, T> {
    pub head: &'a Classifier<T>,
}

impl<T: Real> Predictor<Vec<T>> for LinearPredictor<'_, T> {
    fn predict_batch(&self, xs: &[&Vec<T>]) -> Result<Vec<usize>, FrelError> {
        if let Some(x) = xs.iter().find(|x| x.len() != self.head.in_dim) {
            return Err(NnError::ShapeMismatch { expected: vec![self.head.in_dim], actual: vec![x.len()] }.into());
        }
        let flat: Vec<T> = xs.iter().flat_map(|x| x.iter().copied()).collect();
        let logits = self.head.forward(&flat, xs.len());
        Ok(logits.chunks_exact(self.head.classes).map(argmax).collect())
    }
}

/// kNN vote over a labelled support set of embeddings.
pub struct KnnPredictor<'a, T> {
    pub support: &'a [Labeled<Vec<T>>],
    pub k: usize,
}

impl<T: Real> Predictor<Vec<T>> for KnnPredictor<'_, T> {
    fn predict_batch(&self, xs: &[&Vec<T>]) -> Result<Vec<usize>, FrelError> {
        xs.iter().map(|q| knn_classify(self.support, q, self.k)).collect()
    }
}

/// Accuracy plus a `C × C` confusion matrix (rows actual, columns predicted).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn from_pairs(actual: &[usize], predicted: &[usize], class_count: usize) -> Self {
        let mut confusion = vec![vec![0; class_count]; class_count];
        for (&a, &p) in actual.iter().zip(predicted) {
            confusion[a][p] += 1;
        }
        let total: usize = confusion.iter().flatten().sum();
        let hits: usize = (0..class_count).map(|i| confusion[i][i]).sum();
        let accuracy = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        Self { accuracy, confusion }
    }

    /// Confusion matrix as CSV, `actual\predicted` in the corner cell.
    pub fn confusion_csv(&self) -> String {
        let c = self.confusion.len();
        let mut s = String::from("actual\\predicted");
        for j in 0..c {
            s.push_str(&format!(",{j}"));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Runs `model` over the test split. Predictions outside `[0, C)` are an error.
pub fn evaluate<X, P: Predictor<X> + ?Sized>(
    model: &P,
    test: &TestSet<X>,
    class_count: usize,
) -> Result<Evaluation, FrelError> {
    let items = test.read();
    let xs: Vec<&X> = items.iter().map(|l| &l.x).collect();
    let predicted = model.predict_batch(&xs)?;
    let actual: Vec<usize> = items.iter().map(|l| l.label).collect();
    if let Some(&p) = predicted.iter().chain(&actual).find(|&&p| p >= class_count) {
        return Err(FrelError::InvalidDataset(format!("class {p} outside [0, {class_count})")));
    }
    Ok(Evaluation::from_pairs(&actual, &predicted, class_count))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Test double that returns a label stored in the input itself.
    struct Echo;
    impl Predictor<(usize, usize)> for Echo {
        fn predict_batch(&self, xs: &[&(usize, usize)]) -> Result<Vec<usize>, FrelError> {
            Ok(xs.iter().map(|x| x.0).collect())
        }
    }

    struct Constant(usize);
    impl Predictor<(usize, usize)> for Constant {
        fn predict_batch(&self, xs: &[&(usize, usize)]) -> Result<Vec<usize>, FrelError> {
            Ok(vec![self.0; xs.len()])
        }
    }

    fn balanced(c: usize, n: usize) -> TestSet<(usize, usize)> {
        TestSet::new((0..c * n).map(|i| Labeled::new((i % c, i), i % c)).collect())
    }

    #[test]
    fn echo_is_perfect_and_diagonal() {
        let e = evaluate(&Echo, &balanced(4, 3), 4).unwrap();
        assert_eq!(e.accuracy, 1.0);
        for (i, row) in e.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 3 } else { 0 });
            }
        }
    }

    #[test]
    fn constant_output_scores_one_over_c() {
        let e = evaluate(&Constant(2), &balanced(5, 4), 5).unwrap();
        assert!((e.accuracy - 0.2).abs() < 1e-15);
    }

    #[test]
    fn confusion_rows_recount_labels() {
        let items: Vec<Labeled<(usize, usize)>> =
            [0, 0, 1, 2, 2, 2, 1].iter().enumerate().map(|(i, &l)| Labeled::new(((i * 7) % 3, i), l)).collect();
        let mut counts = [0usize; 3];
        for it in &items {
            counts[it.label] += 1;
        }
        let e = evaluate(&Echo, &TestSet::new(items), 3).unwrap();
        for (row, n) in e.confusion.iter().zip(counts) {
            assert_eq!(row.iter().sum::<usize>(), n);
        }
        let trace: usize = (0..3).map(|i| e.confusion[i][i]).sum();
        assert!((e.accuracy - trace as f64 / 7.0).abs() < 1e-15);
        assert!(e.confusion_csv().starts_with("actual\\predicted,0,1,2\n0,"));
    }

    #[test]
    fn linear_head_on_embeddings_matches_the_full_network() {
        use crate::frel::train::embed_windows;
        use crate::nn::{build_embedding, Mode, EMBEDDING_DIM};
        use crate::testutil::seeded;
        use rand::Rng;

        let mut rng = seeded(31);
        let mut net = build_embedding::<f32>(8, 10, 31).unwrap();
        net.set_mode(Mode::Inference);
        let head = Classifier::new(EMBEDDING_DIM, 4, &mut rng).unwrap();
        // 70 windows so the network predictor crosses a batch boundary
        let windows: Vec<Window<f32>> = (0..70)
            .map(|_| Window::new((0..8 * 10 * 2).map(|_| rng.random_range(-1.0f32..1.0)).collect(), 8, 10, 0.0).unwrap())
            .collect();
        let refs: Vec<&Window<f32>> = windows.iter().collect();
        let z = embed_windows(&net, &refs).unwrap();
        let zrefs: Vec<&Vec<f32>> = z.iter().collect();
        let direct = CnnPredictor { net: &net, head: &head }.predict_batch(&refs).unwrap();
        let linear = LinearPredictor { head: &head }.predict_batch(&zrefs).unwrap();
        assert_eq!(direct, linear);
    }

    #[test]
    fn argmax_ties_take_lower_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0f32]), 0);
    }
}
