use rand::seq::SliceRandom;

use crate::csi::Window;
use crate::nn::{
    backward, cross_entropy, forward, Classifier, EmbeddingNet, Mode, NnError, Optimizer, ParamSet, Tensor,
    EMBEDDING_DIM, INPUT_CHANNELS,
};
use crate::scalar::Real;

use super::episode::sample_episode_indices;
use super::eval::argmax;
use super::{stream_rng, streams, FrelError, FrelHyper, Labeled};

const EMBED_CHUNK: usize = 50;

/// Mean loss and accuracy of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Fine-tuned head and its per-epoch curve.
#[derive(Debug, Clone)]
pub struct FineTuneReport<T> {
    pub head: Classifier<T>,
    pub curve: Vec<EpochMetrics>,
}

/// Channels-first `B × 2 × S_p × K` batch.
pub fn stack_windows<T: Real>(windows: &[&Window<T>]) -> Result<Tensor<T>, NnError> {
    let first = windows.first().ok_or(NnError::BatchTooSmall(0))?;
    let (s, k) = (first.rows(), first.subcarriers());
    let mut data = Vec::with_capacity(windows.len() * first.element_count());
    for w in windows {
        if (w.rows(), w.subcarriers()) != (s, k) {
            return Err(NnError::ShapeMismatch { expected: vec![s, k, 2], actual: w.shape().to_vec() });
        }
        w.extend_channels_first(&mut data);
    }
    Tensor::from_vec(&[windows.len(), INPUT_CHANNELS, s, k], data)
}

/// 64-d embeddings from the frozen running statistics, in input order.
pub fn embed_windows<T: Real>(net: &EmbeddingNet<T>, windows: &[&Window<T>]) -> Result<Vec<Vec<T>>, NnError> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EMBED_CHUNK) {
        let z = net.embed(&stack_windows(chunk)?)?;
        out.extend(z.data().chunks_exact(EMBEDDING_DIM).map(<[T]>::to_vec));
    }
    Ok(out)
}

/// Mean cross-entropy over `data` with frozen batch-norm statistics.
pub fn mean_loss<T: Real>(net: &EmbeddingNet<T>, head: &Classifier<T>, data: &[Labeled<Window<T>>]) -> Result<f64, FrelError> {
    if data.is_empty() {
        return Err(FrelError::EmptyDataset);
    }
    let windows: Vec<&Window<T>> = data.iter().map(|l| &l.x).collect();
    let z: Vec<T> = embed_windows(net, &windows)?.concat();
    let logits = Tensor::from_vec(&[data.len(), head.classes], head.forward(&z, data.len()))?;
    let labels: Vec<usize> = data.iter().map(|l| l.label).collect();
    Ok(cross_entropy(&logits, &labels)?.0.as_f64())
}

fn check_labels<X>(data: &[Labeled<X>], classes: usize) -> Result<(), FrelError> {
    match data.iter().find(|l| l.label >= classes) {
        Some(l) => Err(NnError::LabelOutOfRange { label: l.label, classes }.into()),
        None => Ok(()),
    }
}

/// Joint training of `θ` and `φ` on `D^train`.
///
/// Each epoch the training set is split into stratified tasks of
/// `meta_shots` examples per class; the tasks are merged and consumed one
/// task per optimizer step. The network is switched to train mode on entry
/// and left in inference mode, with its batch-norm statistics frozen.
pub fn meta_train<T: Real>(
    net: &mut EmbeddingNet<T>,
    head: &mut Classifier<T>,
    train: &[Labeled<Window<T>>],
    hp: &FrelHyper,
) -> Result<Vec<EpochMetrics>, FrelError> {
    hp.validate()?;
    if train.is_empty() {
        return Err(FrelError::EmptyDataset);
    }
    check_labels(train, head.classes)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); head.classes];
    for (i, l) in train.iter().enumerate() {
        by_class[l.label].push(i);
    }
    by_class.retain(|v| !v.is_empty());
    let smallest = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let tasks = smallest / hp.meta_shots;
    if tasks == 0 {
        let (class, available) = train
            .iter()
            .map(|l| l.label)
            .map(|c| (c, train.iter().filter(|l| l.label == c).count()))
            .min_by_key(|p| p.1)
            .unwrap_or((0, 0));
        return Err(FrelError::InsufficientShots { class, available, needed: hp.meta_shots });
    }

    let mut lens = net.blob_lens();
    lens.extend(head.blob_lens());
    let mut opt = Optimizer::<T>::new(hp.optimizer, hp.alpha, &lens);
    let mut rng = stream_rng(hp.seed, streams::META);
    net.set_mode(Mode::Train);

    let mut curve = Vec::with_capacity(hp.meta_epochs);
    for epoch in 0..hp.meta_epochs {
        for members in &mut by_class {
            members.shuffle(&mut rng);
        }
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for t in 0..tasks {
            let idx: Vec<usize> =
                by_class.iter().flat_map(|m| m[t * hp.meta_shots..(t + 1) * hp.meta_shots].iter().copied()).collect();
            let windows: Vec<&Window<T>> = idx.iter().map(|&i| &train[i].x).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train[i].label).collect();
            let (logits, tape) = forward(net, head, &stack_windows(&windows)?)?;
            let (loss, dlogits) = cross_entropy(&logits, &labels)?;
            let grads = backward(net, head, &tape, &dlogits)?;
            let mut params = net.blobs_mut();
            params.extend(head.blobs_mut());
            opt.step(&mut params, &grads.blobs())?;

            loss_sum += loss.as_f64() * labels.len() as f64;
            correct += (0..labels.len()).filter(|&b| argmax(logits.row(b)) == labels[b]).count();
            seen += labels.len();
        }
        curve.push(EpochMetrics { epoch, loss: loss_sum / seen as f64, accuracy: correct as f64 / seen as f64 });
    }
    net.set_mode(Mode::Inference);
    Ok(curve)
}

/// Classifier-only fine-tuning on precomputed tune-set embeddings.
///
/// Every episode samples `k_shots` examples from each of the `class_count`
/// classes. The head starts from `warm` when `hp.warm_start` is set and a
/// fresh initialization otherwise.
pub fn fine_tune_embedded<T: Real>(
    tune: &[Labeled<Vec<T>>],
    class_count: usize,
    hp: &FrelHyper,
    warm: Option<&Classifier<T>>,
) -> Result<FineTuneReport<T>, FrelError> {
    hp.validate()?;
    check_labels(tune, class_count)?;
    let mut head = match (hp.warm_start, warm) {
        (true, Some(h)) if h.classes == class_count => h.clone(),
        (true, _) => return Err(FrelError::InvalidHyper("warm start needs a head with matching classes".into())),
        (false, _) => Classifier::new(EMBEDDING_DIM, class_count, &mut stream_rng(hp.seed, streams::HEAD_INIT))?,
    };
    let labels: Vec<usize> = tune.iter().map(|l| l.label).collect();
    let classes: Vec<usize> = (0..class_count).collect();
    let mut opt = Optimizer::<T>::new(hp.optimizer, hp.beta, &head.blob_lens());
    let mut rng = stream_rng(hp.seed, streams::TUNE);

    let mut curve = Vec::with_capacity(hp.tune_epochs);
    for epoch in 0..hp.tune_epochs {
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for _ in 0..hp.episodes_per_epoch {
            let idx = sample_episode_indices(&labels, &classes, hp.k_shots, &mut rng)?;
            let b = idx.len();
            let z: Vec<T> = idx.iter().flat_map(|&i| tune[i].x.iter().copied()).collect();
            let ep_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let logits = Tensor::from_vec(&[b, class_count], head.forward(&z, b))?;
            let (loss, dlogits) = cross_entropy(&logits, &ep_labels)?;
            let (grads, _) = head.backward(&z, dlogits.data(), b);
            opt.step(&mut head.blobs_mut(), &grads.blobs())?;

            loss_sum += loss.as_f64() * b as f64;
            correct += (0..b).filter(|&r| argmax(logits.row(r)) == ep_labels[r]).count();
            seen += b;
        }
        if seen > 0 {
            curve.push(EpochMetrics { epoch, loss: loss_sum / seen as f64, accuracy: correct as f64 / seen as f64 });
        }
    }
    Ok(FineTuneReport { head, curve })
}

/// Embeds `D^tune` once with the frozen `θ*` and fine-tunes a head on it.
/// `θ*` is only borrowed immutably.
pub fn fine_tune<T: Real>(
    net: &EmbeddingNet<T>,
    tune: &[Labeled<Window<T>>],
    class_count: usize,
    hp: &FrelHyper,
    warm: Option<&Classifier<T>>,
) -> Result<FineTuneReport<T>, FrelError> {
    if net.mode() != Mode::Inference {
        return Err(FrelError::NotFrozen);
    }
    let windows: Vec<&Window<T>> = tune.iter().map(|l| &l.x).collect();
    let z = embed_windows(net, &windows)?;
    let embedded: Vec<Labeled<Vec<T>>> = z.into_iter().zip(tune).map(|(x, l)| Labeled::new(x, l.label)).collect();
    fine_tune_embedded(&embedded, class_count, hp, warm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frel::{merge_tasks, sample_episode, Episode};
    use crate::nn::{build_embedding, OptimizerKind};
    use crate::testutil::seeded;
    use rand::Rng;

    fn random_window(rng: &mut impl Rng, s: usize, k: usize, offset: f64) -> Window<f64> {
        Window::new((0..s * k * 2).map(|_| rng.random_range(-1.0..1.0) + offset).collect(), s, k, 0.0).unwrap()
    }

    fn toy_data(per_class: usize, classes: usize, seed: u64) -> Vec<Labeled<Window<f64>>> {
        let mut rng = seeded(seed);
        (0..per_class * classes).map(|i| Labeled::new(random_window(&mut rng, 8, 8, (i % classes) as f64), i % classes)).collect()
    }

    #[test]
    fn merged_loss_equals_mean_of_task_losses() {
        let mut net = build_embedding::<f64>(8, 8, 3).unwrap();
        net.set_mode(Mode::Inference);
        let head = Classifier::new(EMBEDDING_DIM, 4, &mut seeded(3)).unwrap();
        let data = toy_data(6, 4, 5);
        let mut rng = seeded(8);
        let tasks: Vec<Episode<Window<f64>>> =
            (0..3).map(|_| sample_episode(&data, &[0, 1, 2, 3], 2, 4, &mut rng).unwrap()).collect();
        let per_task: f64 =
            tasks.iter().map(|t| mean_loss(&net, &head, t.examples()).unwrap()).sum::<f64>() / tasks.len() as f64;
        let merged = mean_loss(&net, &head, &merge_tasks(tasks).unwrap()).unwrap();
        assert!((merged - per_task).abs() <= 1e-12 * merged.abs());
    }

    #[test]
    fn zero_alpha_leaves_weights_and_curve_flat() {
        let mut net = build_embedding::<f64>(8, 8, 4).unwrap();
        let mut head = Classifier::new(EMBEDDING_DIM, 3, &mut seeded(4)).unwrap();
        let (w0, h0) = (net.clone(), head.clone());
        let hp = FrelHyper { alpha: 0.0, meta_epochs: 3, meta_shots: 2, ..FrelHyper::default() };
        let curve = meta_train(&mut net, &mut head, &toy_data(2, 3, 6), &hp).unwrap();
        assert_eq!(net.blobs(), w0.blobs());
        assert_eq!(head, h0);
        assert_ne!(net.blocks[0].bn.running_mean, w0.blocks[0].bn.running_mean);
        assert_eq!(net.mode(), Mode::Inference);
        // a single full task per epoch: identical batch, identical loss
        assert!(curve.windows(2).all(|w| (w[0].loss - w[1].loss).abs() < 1e-12));
    }

    #[test]
    fn plain_gd_step_matches_hand_rolled_update() {
        let data = toy_data(3, 2, 9);
        let mut net = build_embedding::<f64>(8, 8, 10).unwrap();
        let mut head = Classifier::new(EMBEDDING_DIM, 2, &mut seeded(10)).unwrap();
        let (mut onet, ohead) = (net.clone(), head.clone());
        let hp = FrelHyper { alpha: 0.05, meta_epochs: 1, meta_shots: 3, optimizer: OptimizerKind::PlainGd, ..FrelHyper::default() };
        meta_train(&mut net, &mut head, &data, &hp).unwrap();

        // same batch order as the single task meta_train draws
        let mut rng = stream_rng(hp.seed, streams::META);
        let mut order: Vec<usize> = Vec::new();
        for c in 0..2 {
            let mut members: Vec<usize> = (0..data.len()).filter(|&i| data[i].label == c).collect();
            members.shuffle(&mut rng);
            order.extend(members);
        }
        let windows: Vec<&Window<f64>> = order.iter().map(|&i| &data[i].x).collect();
        let labels: Vec<usize> = order.iter().map(|&i| data[i].label).collect();
        let (logits, tape) = forward(&mut onet, &ohead, &stack_windows(&windows).unwrap()).unwrap();
        let (_, dl) = cross_entropy(&logits, &labels).unwrap();
        let g = backward(&onet, &ohead, &tape, &dl).unwrap();
        let mut expected: Vec<f64> = Vec::new();
        for (p, d) in onet.blobs().iter().chain(ohead.blobs().iter()).zip(g.blobs()) {
            expected.extend(p.iter().zip(d).map(|(p, d)| p - 0.05 * d));
        }
        let got: Vec<f64> = net.blobs().iter().chain(head.blobs().iter()).flat_map(|b| b.iter().copied()).collect();
        let worst = got.iter().zip(&expected).map(|(a, b)| (a - b).abs() / b.abs().max(1e-12)).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "worst relative deviation {worst}");
    }

    #[test]
    fn separable_classes_reach_full_train_accuracy() {
        let mut rng = seeded(12);
        let data: Vec<Labeled<Window<f32>>> = (0..100)
            .map(|i| {
                let c = i % 5;
                let t: Vec<f32> = (0..16 * 16 * 2)
                    .map(|j| {
                        let (s, k) = ((j / 2) / 16, (j / 2) % 16);
                        let wave = ((c as f32 + 1.0) * 0.7 * s as f32 + 0.3 * k as f32 * c as f32).sin();
                        wave + rng.random_range(-0.1..0.1)
                    })
                    .collect();
                Labeled::new(Window::new(t, 16, 16, 0.0).unwrap(), c)
            })
            .collect();
        let mut net = build_embedding::<f32>(16, 16, 1).unwrap();
        let mut head = Classifier::new(EMBEDDING_DIM, 5, &mut seeded(1)).unwrap();
        let hp = FrelHyper { meta_epochs: 25, meta_shots: 4, ..FrelHyper::default() };
        let curve = meta_train(&mut net, &mut head, &data, &hp).unwrap();
        assert!(curve.last().unwrap().accuracy >= 0.99, "{curve:?}");
    }

    #[test]
    fn memorizes_fifty_noise_windows_within_200_steps() {
        let mut rng = seeded(21);
        let data: Vec<Labeled<Window<f32>>> = (0..50)
            .map(|i| {
                let t = (0..16 * 16 * 2).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                Labeled::new(Window::new(t, 16, 16, 0.0).unwrap(), i % 5)
            })
            .collect();
        let mut net = build_embedding::<f32>(16, 16, 5).unwrap();
        let mut head = Classifier::new(EMBEDDING_DIM, 5, &mut seeded(5)).unwrap();
        // one task holding all 50 windows per epoch, so one Adam step per epoch
        let hp = FrelHyper { alpha: 0.01, meta_epochs: 200, meta_shots: 10, ..FrelHyper::default() };
        let curve = meta_train(&mut net, &mut head, &data, &hp).unwrap();
        assert!(curve.iter().any(|m| m.accuracy == 1.0), "{:?}", curve.last());
    }

    #[test]
    fn fine_tune_freezes_theta_and_zero_beta_keeps_init() {
        let mut net = build_embedding::<f64>(8, 8, 2).unwrap();
        net.set_mode(Mode::Inference);
        let before = net.fingerprint();
        let tune = toy_data(6, 3, 2);
        let hp = FrelHyper { beta: 0.0, tune_epochs: 2, episodes_per_epoch: 2, k_shots: 3, ..FrelHyper::default() };
        let rep = fine_tune(&net, &tune, 3, &hp, None).unwrap();
        assert_eq!(net.fingerprint(), before);
        let init = Classifier::<f64>::new(EMBEDDING_DIM, 3, &mut stream_rng(hp.seed, streams::HEAD_INIT)).unwrap();
        assert_eq!(rep.head, init);
        let warm = FrelHyper { warm_start: true, ..hp.clone() };
        assert_eq!(fine_tune(&net, &tune, 3, &warm, Some(&init)).unwrap().head, init);
    }

    #[test]
    fn fine_tune_requires_frozen_network_and_enough_shots() {
        let net = build_embedding::<f64>(8, 8, 2).unwrap();
        let tune = toy_data(2, 2, 2);
        assert!(matches!(fine_tune(&net, &tune, 2, &FrelHyper::default(), None), Err(FrelError::NotFrozen)));
        let mut frozen = net.clone();
        frozen.set_mode(Mode::Inference);
        assert!(matches!(
            fine_tune(&frozen, &tune, 2, &FrelHyper::default(), None),
            Err(FrelError::InsufficientShots { needed: 5, .. })
        ));
    }
}
