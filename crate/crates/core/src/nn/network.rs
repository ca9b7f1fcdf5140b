use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::scalar::Real;

use super::layers::{
    bn_relu_max_pool, global_avg_pool_backward, max_pool_2x2_backward, BatchNorm, BnCache, Classifier, ClassifierGrads,
    Conv3x3,
};
use super::{Mode, NnError, ParamSet, Tensor};

pub const EMBEDDING_DIM: usize = 64;
/// Real and imaginary planes.
pub const INPUT_CHANNELS: usize = 2;
const BLOCKS: usize = 4;
const POOLED_BLOCKS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv3x3<T>,
    pub bn: BatchNorm<T>,
}

/// The embedding network `E_θ`: `[conv→BN→ReLU→maxpool]×3 → conv→BN→ReLU→global-avg-pool`.
///
/// Input batches are channels-first: `B × 2 × rows × cols` where rows are
/// time samples and cols are subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet<T> {
    input_rows: usize,
    input_cols: usize,
    pub blocks: Vec<ConvBlock<T>>,
    mode: Mode,
}

/// Everything the backward pass of one block needs.
#[derive(Debug, Clone)]
struct BlockTape<T> {
    h: usize,
    w: usize,
    input: Vec<T>,
    bn: BnCache<T>,
    pool_arg: Option<Vec<u8>>,
}

/// Recorded forward pass through the embedding network.
#[derive(Debug, Clone)]
pub struct EmbeddingTape<T> {
    batch: usize,
    input_shape: (usize, usize),
    blocks: Vec<BlockTape<T>>,
}

impl<T> EmbeddingTape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Recorded forward pass through embedding network and classifier.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub embedding: EmbeddingTape<T>,
    /// `B × 64` embeddings fed to the classifier.
    pub z: Tensor<T>,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads<T> {
    pub weight: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrads<T> {
    pub blocks: Vec<BlockGrads<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub embedding: EmbeddingGrads<T>,
    pub classifier: ClassifierGrads<T>,
}

/// Builds a freshly initialized embedding network for `rows × cols` windows.
pub fn build_embedding<T: Real>(rows: usize, cols: usize, seed: u64) -> Result<EmbeddingNet<T>, NnError> {
    EmbeddingNet::new(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}

impl<T: Real> EmbeddingNet<T> {
    pub fn new<R: rand::Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Self, NnError> {
        if rows < 8 || cols < 8 {
            return Err(NnError::ShapeTooSmall { rows, cols });
        }
        let blocks = (0..BLOCKS)
            .map(|i| {
                let cin = if i == 0 { INPUT_CHANNELS } else { EMBEDDING_DIM };
                ConvBlock { conv: Conv3x3::new(cin, EMBEDDING_DIM, rng), bn: BatchNorm::new(EMBEDDING_DIM) }
            })
            .collect();
        Ok(Self { input_rows: rows, input_cols: cols, blocks, mode: Mode::Train })
    }

    /// Assembles a network from explicit blocks (checkpoint loading, tests).
    pub fn from_blocks(rows: usize, cols: usize, blocks: Vec<ConvBlock<T>>, mode: Mode) -> Result<Self, NnError> {
        if rows < 8 || cols < 8 {
            return Err(NnError::ShapeTooSmall { rows, cols });
        }
        let shapes_ok = blocks.len() == BLOCKS
            && blocks.iter().enumerate().all(|(i, b)| {
                let cin = if i == 0 { INPUT_CHANNELS } else { EMBEDDING_DIM };
                b.conv.in_channels == cin
                    && b.conv.out_channels == EMBEDDING_DIM
                    && b.conv.weight.len() == cin * EMBEDDING_DIM * 9
                    && [&b.bn.gamma, &b.bn.beta, &b.bn.running_mean, &b.bn.running_var]
                        .iter()
                        .all(|v| v.len() == EMBEDDING_DIM)
            });
        if !shapes_ok {
            return Err(NnError::Checkpoint("embedding blocks do not match the architecture".into()));
        }
        Ok(Self { input_rows: rows, input_cols: cols, blocks, mode })
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.input_rows, self.input_cols)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize, NnError> {
        let s = batch.shape();
        let expected = [s.first().copied().unwrap_or(0), INPUT_CHANNELS, self.input_rows, self.input_cols];
        if s.len() != 4 || s[1..] != expected[1..] {
            return Err(NnError::ShapeMismatch { expected: expected.to_vec(), actual: s.to_vec() });
        }
        if !batch.all_finite() {
            return Err(NnError::NonFiniteActivation { stage: "input" });
        }
        Ok(s[0])
    }

    /// Shared forward pass. With `train` the batch statistics are used and
    /// returned (for the caller to fold into the running statistics).
    fn run(
        &self,
        batch: &Tensor<T>,
        train: bool,
        keep_tape: bool,
    ) -> Result<(Tensor<T>, Option<EmbeddingTape<T>>, Vec<Vec<(T, T)>>), NnError> {
        let b = self.check_batch(batch)?;
        if train && b < 2 {
            return Err(NnError::BatchTooSmall(b));
        }
        let (mut h, mut w) = (self.input_rows, self.input_cols);
        let mut input = batch.data().to_vec();
        let mut tapes = Vec::with_capacity(BLOCKS);
        let mut stats = Vec::new();
        let mut z = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let hw = h * w;
            let mut xhat = block.conv.forward(&input, b, h, w);
            let (inv_std, mode) = if train {
                let (istd, s) = block.bn.normalize_batch_in_place(&mut xhat, b, hw);
                stats.push(s);
                (istd, Mode::Train)
            } else {
                (block.bn.normalize_inference_in_place(&mut xhat, b, hw), Mode::Inference)
            };
            let planes = b * EMBEDDING_DIM;
            let (next, arg) = if i < POOLED_BLOCKS {
                let (pooled, arg) = bn_relu_max_pool(&block.bn, &xhat, planes, h, w);
                (pooled, Some(arg))
            } else {
                let inv = T::one() / T::lit(hw as f64);
                z = (0..planes)
                    .map(|p| {
                        xhat[p * hw..(p + 1) * hw].iter().map(|&v| block.bn.affine(p, v).max(T::zero())).sum::<T>() * inv
                    })
                    .collect();
                (Vec::new(), None)
            };
            if keep_tape {
                tapes.push(BlockTape {
                    h,
                    w,
                    input: std::mem::take(&mut input),
                    bn: BnCache { xhat, inv_std, mode },
                    pool_arg: arg,
                });
            }
            input = next;
            if i < POOLED_BLOCKS {
                h /= 2;
                w /= 2;
            }
        }
        let z = Tensor::from_vec(&[b, EMBEDDING_DIM], z)?;
        if !z.all_finite() {
            return Err(NnError::NonFiniteActivation { stage: "embedding" });
        }
        let tape = keep_tape.then_some(EmbeddingTape {
            batch: b,
            input_shape: (self.input_rows, self.input_cols),
            blocks: tapes,
        });
        Ok((z, tape, stats))
    }

    /// Train-mode forward: batch statistics, running statistics updated.
    pub fn forward_train(&mut self, batch: &Tensor<T>) -> Result<(Tensor<T>, EmbeddingTape<T>), NnError> {
        let (z, tape, stats) = self.run(batch, true, true)?;
        for (block, s) in self.blocks.iter_mut().zip(&stats) {
            block.bn.update_running(s);
        }
        Ok((z, tape.expect("tape requested")))
    }

    /// Inference-mode forward with a tape (gradients through frozen statistics).
    pub fn forward_inference(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, EmbeddingTape<T>), NnError> {
        let (z, tape, _) = self.run(batch, false, true)?;
        Ok((z, tape.expect("tape requested")))
    }

    /// `B × 64` embeddings using the frozen running statistics. Never mutates.
    pub fn embed(&self, batch: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(self.run(batch, false, false)?.0)
    }

    /// All state (trainable weights and batch-norm running statistics) in
    /// declaration order.
    pub fn state_blobs(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([
                &b.conv.weight[..],
                &b.bn.gamma[..],
                &b.bn.beta[..],
                &b.bn.running_mean[..],
                &b.bn.running_var[..],
            ]);
        }
        out
    }

    /// SHA-256 over the input shape and every state blob.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.input_rows as u64).to_le_bytes());
        h.update((self.input_cols as u64).to_le_bytes());
        for blob in self.state_blobs() {
            h.update((blob.len() as u64).to_le_bytes());
            for v in blob {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

impl<T: Real> ParamSet<T> for EmbeddingNet<T> {
    fn blobs(&self) -> Vec<&[T]> {
        self.blocks.iter().flat_map(|b| [&b.conv.weight[..], &b.bn.gamma[..], &b.bn.beta[..]]).collect()
    }
    fn blobs_mut(&mut self) -> Vec<&mut [T]> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.conv.weight[..], &mut b.bn.gamma[..], &mut b.bn.beta[..]])
            .collect()
    }
}

impl<T: Real> ParamSet<T> for EmbeddingGrads<T> {
    fn blobs(&self) -> Vec<&[T]> {
        self.blocks.iter().flat_map(|b| [&b.weight[..], &b.gamma[..], &b.beta[..]]).collect()
    }
    fn blobs_mut(&mut self) -> Vec<&mut [T]> {
        self.blocks.iter_mut().flat_map(|b| [&mut b.weight[..], &mut b.gamma[..], &mut b.beta[..]]).collect()
    }
}

impl<T: Real> ParamSet<T> for Gradients<T> {
    fn blobs(&self) -> Vec<&[T]> {
        let mut v = self.embedding.blobs();
        v.extend(self.classifier.blobs());
        v
    }
    fn blobs_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.embedding.blobs_mut();
        v.extend(self.classifier.blobs_mut());
        v
    }
}

/// Back-propagates `dz` (`B × 64`) through a recorded embedding pass.
pub fn backward_embedding<T: Real>(
    net: &EmbeddingNet<T>,
    tape: &EmbeddingTape<T>,
    dz: &Tensor<T>,
) -> Result<EmbeddingGrads<T>, NnError> {
    if tape.input_shape != net.input_shape() || tape.blocks.len() != BLOCKS {
        return Err(NnError::TapeMismatch(format!(
            "tape recorded for input {:?}, network expects {:?}",
            tape.input_shape,
            net.input_shape()
        )));
    }
    let b = tape.batch;
    if dz.shape() != [b, EMBEDDING_DIM] {
        return Err(NnError::TapeMismatch(format!("gradient shape {:?} vs batch {b}", dz.shape())));
    }
    let mut grads = Vec::with_capacity(BLOCKS);
    let mut dnext: Vec<T> = Vec::new();
    for (i, (block, bt)) in net.blocks.iter().zip(&tape.blocks).enumerate().rev() {
        let (h, w) = (bt.h, bt.w);
        let planes = b * EMBEDDING_DIM;
        let mut dact = match &bt.pool_arg {
            Some(arg) => max_pool_2x2_backward(&dnext, arg, planes, h, w),
            None => global_avg_pool_backward(dz.data(), h * w),
        };
        // ReLU mask, recomputed exactly as in the forward pass.
        let hw = h * w;
        for (p, chunk) in dact.chunks_exact_mut(hw).enumerate() {
            let ch = p % EMBEDDING_DIM;
            let (g, bt_) = (block.bn.gamma[ch], block.bn.beta[ch]);
            let xhat = &bt.bn.xhat[p * hw..(p + 1) * hw];
            for (d, &xh) in chunk.iter_mut().zip(xhat) {
                if g * xh + bt_ <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        let (dgamma, dbeta) = block.bn.backward_in_place(&mut dact, &bt.bn, b, hw);
        let (dweight, dinput) = block.conv.backward(&bt.input, &dact, b, h, w, i > 0);
        grads.push(BlockGrads { weight: dweight, gamma: dgamma, beta: dbeta });
        dnext = dinput.unwrap_or_default();
    }
    grads.reverse();
    Ok(EmbeddingGrads { blocks: grads })
}

/// Full forward pass `C_φ(E_θ(x))`, honouring the network's batch-norm mode.
pub fn forward<T: Real>(
    net: &mut EmbeddingNet<T>,
    head: &Classifier<T>,
    batch: &Tensor<T>,
) -> Result<(Tensor<T>, Tape<T>), NnError> {
    if head.in_dim != EMBEDDING_DIM {
        return Err(NnError::ShapeMismatch { expected: vec![EMBEDDING_DIM], actual: vec![head.in_dim] });
    }
    let (z, emb_tape) = match net.mode() {
        Mode::Train => net.forward_train(batch)?,
        Mode::Inference => net.forward_inference(batch)?,
    };
    let b = emb_tape.batch;
    let logits = Tensor::from_vec(&[b, head.classes], head.forward(z.data(), b))?;
    if !logits.all_finite() {
        return Err(NnError::NonFiniteActivation { stage: "logits" });
    }
    Ok((logits, Tape { embedding: emb_tape, z, classes: head.classes }))
}

/// Gradients of every trainable parameter given `dL/dlogits`.
pub fn backward<T: Real>(
    net: &EmbeddingNet<T>,
    head: &Classifier<T>,
    tape: &Tape<T>,
    dlogits: &Tensor<T>,
) -> Result<Gradients<T>, NnError> {
    let b = tape.embedding.batch;
    if head.classes != tape.classes || dlogits.shape() != [b, tape.classes] {
        return Err(NnError::TapeMismatch(format!(
            "dlogits {:?} vs tape batch {b} × {} classes (head has {})",
            dlogits.shape(),
            tape.classes,
            head.classes
        )));
    }
    let (cg, dz) = head.backward(tape.z.data(), dlogits.data(), b);
    let dz = Tensor::from_vec(&[b, EMBEDDING_DIM], dz)?;
    let eg = backward_embedding(net, &tape.embedding, &dz)?;
    Ok(Gradients { embedding: eg, classifier: cg })
}
