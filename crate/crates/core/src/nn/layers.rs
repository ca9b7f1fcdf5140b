//! Individual layers with explicit forward/backward passes.
//!
//! Activations are channels-first (`B × C × H × W`) flat slices.

use rand::Rng;

use crate::scalar::{gemm, MatRef, Real};

use super::{Mode, NnError, ParamSet};

/// Uniform `[-bound, bound]` with `bound = sqrt(6 / fan_in)` (Kaiming, ReLU gain).
pub(crate) fn kaiming_uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
}

/// 3×3 convolution, stride 1, zero padding 1, no bias (batch norm follows).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out × in × 3 × 3`, row-major.
    pub weight: Vec<T>,
}

impl<T: Real> Conv3x3<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let fan_in = in_channels * 9;
        Self { in_channels, out_channels, weight: kaiming_uniform(rng, out_channels * fan_in, fan_in) }
    }

    pub fn from_weight(in_channels: usize, out_channels: usize, weight: Vec<T>) -> Result<Self, NnError> {
        if weight.len() != in_channels * out_channels * 9 {
            return Err(NnError::ShapeMismatch {
                expected: vec![out_channels, in_channels, 3, 3],
                actual: vec![weight.len()],
            });
        }
        Ok(Self { in_channels, out_channels, weight })
    }

    /// Unfolds one `C × H × W` image into a `(C·9) × (H·W)` patch matrix.
    fn im2col(&self, image: &[T], h: usize, w: usize, cols: &mut [T]) {
        let hw = h * w;
        for ci in 0..self.in_channels {
            let plane = &image[ci * hw..(ci + 1) * hw];
            for dy in 0..3 {
                for dx in 0..3 {
                    let row = &mut cols[(ci * 9 + dy * 3 + dx) * hw..(ci * 9 + dy * 3 + dx + 1) * hw];
                    for y in 0..h {
                        let out = &mut row[y * w..(y + 1) * w];
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        match dx {
                            0 => {
                                out[0] = T::zero();
                                out[1..].copy_from_slice(&src[..w - 1]);
                            }
                            1 => out.copy_from_slice(src),
                            _ => {
                                out[..w - 1].copy_from_slice(&src[1..]);
                                out[w - 1] = T::zero();
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): accumulates patch gradients back onto the image.
    fn col2im(&self, cols: &[T], h: usize, w: usize, image: &mut [T]) {
        let hw = h * w;
        for ci in 0..self.in_channels {
            let plane = &mut image[ci * hw..(ci + 1) * hw];
            for dy in 0..3 {
                for dx in 0..3 {
                    let row = &cols[(ci * 9 + dy * 3 + dx) * hw..(ci * 9 + dy * 3 + dx + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[y * w..(y + 1) * w];
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        match dx {
                            0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += *s),
                            1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s),
                            _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += *s),
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, input: &[T], batch: usize, h: usize, w: usize) -> Vec<T> {
        let hw = h * w;
        let k = self.in_channels * 9;
        debug_assert_eq!(input.len(), batch * self.in_channels * hw);
        let mut out = vec![T::zero(); batch * self.out_channels * hw];
        let mut cols = vec![T::zero(); k * hw];
        let wmat = MatRef::row_major(&self.weight, self.out_channels, k);
        for b in 0..batch {
            self.im2col(&input[b * self.in_channels * hw..(b + 1) * self.in_channels * hw], h, w, &mut cols);
            gemm(
                T::one(),
                wmat,
                MatRef::row_major(&cols, k, hw),
                T::zero(),
                &mut out[b * self.out_channels * hw..(b + 1) * self.out_channels * hw],
            );
        }
        out
    }

    /// Returns `(d weight, d input)`; the input gradient is skipped when not needed.
    pub fn backward(
        &self,
        input: &[T],
        dout: &[T],
        batch: usize,
        h: usize,
        w: usize,
        need_input_grad: bool,
    ) -> (Vec<T>, Option<Vec<T>>) {
        let hw = h * w;
        let k = self.in_channels * 9;
        let mut dweight = vec![T::zero(); self.weight.len()];
        let mut dinput = need_input_grad.then(|| vec![T::zero(); input.len()]);
        let mut cols = vec![T::zero(); k * hw];
        let mut dcols = if need_input_grad { vec![T::zero(); k * hw] } else { Vec::new() };
        for b in 0..batch {
            let img = &input[b * self.in_channels * hw..(b + 1) * self.in_channels * hw];
            let dimg = &dout[b * self.out_channels * hw..(b + 1) * self.out_channels * hw];
            self.im2col(img, h, w, &mut cols);
            // dW += dOut · colsᵀ
            gemm(
                T::one(),
                MatRef::row_major(dimg, self.out_channels, hw),
                MatRef::row_major_t(&cols, k, hw),
                T::one(),
                &mut dweight,
            );
            if let Some(dinput) = dinput.as_mut() {
                // dcols = Wᵀ · dOut
                gemm(
                    T::one(),
                    MatRef::row_major_t(&self.weight, self.out_channels, k),
                    MatRef::row_major(dimg, self.out_channels, hw),
                    T::zero(),
                    &mut dcols,
                );
                self.col2im(&dcols, h, w, &mut dinput[b * self.in_channels * hw..(b + 1) * self.in_channels * hw]);
            }
        }
        (dweight, dinput)
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

/// What the backward pass of [`BatchNorm`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(BN_MOMENTUM),
            eps: T::lit(BN_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Replaces `x` (`B × C × hw`) by its batch-normalized value `x̂` (before
    /// scale and shift). Returns the per-channel inverse standard deviations
    /// and `(mean, unbiased variance)` batch statistics.
    pub fn normalize_batch_in_place(&self, x: &mut [T], batch: usize, hw: usize) -> (Vec<T>, Vec<(T, T)>) {
        let c = self.channels();
        let n = batch * hw;
        let nf = T::lit(n as f64);
        let mut inv_std = Vec::with_capacity(c);
        let mut stats = Vec::with_capacity(c);
        for ch in 0..c {
            let planes = (0..batch).map(|b| (b * c + ch) * hw);
            let mut sum = T::zero();
            for off in planes.clone() {
                sum += x[off..off + hw].iter().copied().sum::<T>();
            }
            let mean = sum / nf;
            let mut sq = T::zero();
            for off in planes.clone() {
                sq += x[off..off + hw].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
            }
            let var = sq / nf;
            let istd = T::one() / (var + self.eps).sqrt();
            for off in planes {
                x[off..off + hw].iter_mut().for_each(|v| *v = (*v - mean) * istd);
            }
            inv_std.push(istd);
            let unbiased = if n > 1 { var * nf / T::lit((n - 1) as f64) } else { var };
            stats.push((mean, unbiased));
        }
        (inv_std, stats)
    }

    /// In-place `x̂` using the frozen running statistics.
    pub fn normalize_inference_in_place(&self, x: &mut [T], batch: usize, hw: usize) -> Vec<T> {
        let c = self.channels();
        let inv_std: Vec<T> = self.running_var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                let (mu, istd) = (self.running_mean[ch], inv_std[ch]);
                x[off..off + hw].iter_mut().for_each(|v| *v = (*v - mu) * istd);
            }
        }
        inv_std
    }

    /// `γ·x̂ + β` for plane `p` of a channels-first buffer.
    #[inline]
    pub fn affine(&self, plane: usize, xhat: T) -> T {
        let ch = plane % self.channels();
        self.gamma[ch] * xhat + self.beta[ch]
    }

    fn apply_affine(&self, xhat: &[T], hw: usize) -> Vec<T> {
        let c = self.channels();
        xhat.chunks_exact(hw)
            .enumerate()
            .flat_map(|(p, plane)| {
                let (g, b) = (self.gamma[p % c], self.beta[p % c]);
                plane.iter().map(move |&v| g * v + b)
            })
            .collect()
    }

    pub fn update_running(&mut self, stats: &[(T, T)]) {
        let m = self.momentum;
        for (ch, &(mean, var)) in stats.iter().enumerate() {
            self.running_mean[ch] = (T::one() - m) * self.running_mean[ch] + m * mean;
            self.running_var[ch] = (T::one() - m) * self.running_var[ch] + m * var;
        }
    }

    /// Batch-statistics normalization without touching the running statistics.
    pub fn normalize_batch(&self, x: &[T], batch: usize, hw: usize) -> (Vec<T>, BnCache<T>, Vec<(T, T)>) {
        let mut xhat = x.to_vec();
        let (inv_std, stats) = self.normalize_batch_in_place(&mut xhat, batch, hw);
        let y = self.apply_affine(&xhat, hw);
        (y, BnCache { xhat, inv_std, mode: Mode::Train }, stats)
    }

    /// Normalizes with batch statistics and updates the running statistics.
    pub fn forward_train(&mut self, x: &[T], batch: usize, hw: usize) -> (Vec<T>, BnCache<T>) {
        let (y, cache, stats) = self.normalize_batch(x, batch, hw);
        self.update_running(&stats);
        (y, cache)
    }

    pub fn forward_inference(&self, x: &[T], batch: usize, hw: usize) -> (Vec<T>, BnCache<T>) {
        let mut xhat = x.to_vec();
        let inv_std = self.normalize_inference_in_place(&mut xhat, batch, hw);
        let y = self.apply_affine(&xhat, hw);
        (y, BnCache { xhat, inv_std, mode: Mode::Inference })
    }

    /// Overwrites `dy` with `dx`; returns `(dgamma, dbeta)`.
    pub fn backward_in_place(&self, dy: &mut [T], cache: &BnCache<T>, batch: usize, hw: usize) -> (Vec<T>, Vec<T>) {
        let c = self.channels();
        let nf = T::lit((batch * hw) as f64);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..batch {
                let off = (b * c + ch) * hw;
                for (&d, &xh) in dy[off..off + hw].iter().zip(&cache.xhat[off..off + hw]) {
                    sum_dy += d;
                    sum_dy_xhat += d * xh;
                }
            }
            dgamma[ch] = sum_dy_xhat;
            dbeta[ch] = sum_dy;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            let (mean_dy, mean_dy_xhat) = (sum_dy / nf, sum_dy_xhat / nf);
            for b in 0..batch {
                let off = (b * c + ch) * hw;
                let it = dy[off..off + hw].iter_mut().zip(&cache.xhat[off..off + hw]);
                match cache.mode {
                    Mode::Train => it.for_each(|(d, &xh)| *d = scale * (*d - mean_dy - xh * mean_dy_xhat)),
                    Mode::Inference => it.for_each(|(d, _)| *d = scale * *d),
                }
            }
        }
        (dgamma, dbeta)
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, dy: &[T], cache: &BnCache<T>, batch: usize, hw: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
        let mut dx = dy.to_vec();
        let (dg, db) = self.backward_in_place(&mut dx, cache, batch, hw);
        (dx, dg, db)
    }
}

/// Fused `max_pool_2x2(relu(γ·x̂ + β))` over a channels-first buffer of `x̂`.
pub fn bn_relu_max_pool<T: Real>(bn: &BatchNorm<T>, xhat: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u8>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut arg = vec![0u8; planes * oh * ow];
    for p in 0..planes {
        let src = &xhat[p * h * w..(p + 1) * h * w];
        let act = |i: usize| bn.affine(p, src[i]).max(T::zero());
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * w + 2 * ox;
                let cand = [act(base), act(base + 1), act(base + w), act(base + w + 1)];
                let mut best = 0usize;
                for (i, v) in cand.iter().enumerate().skip(1) {
                    if *v > cand[best] {
                        best = i;
                    }
                }
                let o = p * oh * ow + oy * ow + ox;
                out[o] = cand[best];
                arg[o] = best as u8;
            }
        }
    }
    (out, arg)
}

/// 2×2 stride-2 max pooling; an odd trailing row or column is dropped.
/// Returns `(output, argmax)` with argmax in `0..4` (row-major within the window).
pub fn max_pool_2x2<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u8>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut arg = vec![0u8; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * w + 2 * ox;
                let cand = [src[base], src[base + 1], src[base + w], src[base + w + 1]];
                let mut best = 0usize;
                for (i, v) in cand.iter().enumerate().skip(1) {
                    if *v > cand[best] {
                        best = i;
                    }
                }
                let o = p * oh * ow + oy * ow + ox;
                out[o] = cand[best];
                arg[o] = best as u8;
            }
        }
    }
    (out, arg)
}

pub fn max_pool_2x2_backward<T: Real>(dout: &[T], arg: &[u8], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = p * oh * ow + oy * ow + ox;
                let a = arg[o] as usize;
                let idx = p * h * w + (2 * oy + a / 2) * w + 2 * ox + a % 2;
                dx[idx] += dout[o];
            }
        }
    }
    dx
}

/// Mean over each `hw` plane.
pub fn global_avg_pool<T: Real>(x: &[T], planes: usize, hw: usize) -> Vec<T> {
    let inv = T::one() / T::lit(hw as f64);
    (0..planes).map(|p| x[p * hw..(p + 1) * hw].iter().copied().sum::<T>() * inv).collect()
}

pub fn global_avg_pool_backward<T: Real>(dout: &[T], hw: usize) -> Vec<T> {
    let inv = T::one() / T::lit(hw as f64);
    dout.iter().flat_map(|&d| std::iter::repeat_n(d * inv, hw)).collect()
}

/// Linear decoder from the embedding space to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    pub in_dim: usize,
    pub classes: usize,
    /// `in_dim × classes`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Classifier<T> {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, classes: usize, rng: &mut R) -> Result<Self, NnError> {
        if classes < 2 {
            return Err(NnError::TooFewClasses(classes));
        }
        Ok(Self { in_dim, classes, weight: kaiming_uniform(rng, in_dim * classes, in_dim), bias: vec![T::zero(); classes] })
    }

    /// `B × in_dim` embeddings to `B × classes` logits.
    pub fn forward(&self, z: &[T], batch: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(batch * self.classes);
        for _ in 0..batch {
            out.extend_from_slice(&self.bias);
        }
        gemm(
            T::one(),
            MatRef::row_major(z, batch, self.in_dim),
            MatRef::row_major(&self.weight, self.in_dim, self.classes),
            T::one(),
            &mut out,
        );
        out
    }

    /// Returns `(param grads, d z)`.
    pub fn backward(&self, z: &[T], dlogits: &[T], batch: usize) -> (ClassifierGrads<T>, Vec<T>) {
        let mut dw = vec![T::zero(); self.weight.len()];
        gemm(
            T::one(),
            MatRef::row_major_t(z, batch, self.in_dim),
            MatRef::row_major(dlogits, batch, self.classes),
            T::zero(),
            &mut dw,
        );
        let mut db = vec![T::zero(); self.classes];
        for row in dlogits.chunks_exact(self.classes) {
            db.iter_mut().zip(row).for_each(|(d, g)| *d += *g);
        }
        let mut dz = vec![T::zero(); batch * self.in_dim];
        gemm(
            T::one(),
            MatRef::row_major(dlogits, batch, self.classes),
            MatRef::row_major_t(&self.weight, self.in_dim, self.classes),
            T::zero(),
            &mut dz,
        );
        (ClassifierGrads { weight: dw, bias: db }, dz)
    }
}

impl<T: Real> ParamSet<T> for Classifier<T> {
    fn blobs(&self) -> Vec<&[T]> {
        vec![&self.weight, &self.bias]
    }
    fn blobs_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl<T: Real> ParamSet<T> for ClassifierGrads<T> {
    fn blobs(&self) -> Vec<&[T]> {
        vec![&self.weight, &self.bias]
    }
    fn blobs_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{central_diff, max_rel_err, seeded};

    /// Straight nested-loop convolution, independent of the im2col path.
    fn naive_conv(conv: &Conv3x3<f64>, x: &[f64], batch: usize, h: usize, w: usize) -> Vec<f64> {
        let (ci_n, co_n) = (conv.in_channels, conv.out_channels);
        let mut out = vec![0.0; batch * co_n * h * w];
        for b in 0..batch {
            for co in 0..co_n {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = 0.0;
                        for ci in 0..ci_n {
                            for dy in 0..3 {
                                for dx in 0..3 {
                                    let sy = y as isize + dy as isize - 1;
                                    let sx = xx as isize + dx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += conv.weight[((co * ci_n + ci) * 3 + dy) * 3 + dx]
                                        * x[((b * ci_n + ci) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        out[((b * co_n + co) * h + y) * w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = seeded(1);
        let conv = Conv3x3::<f64>::new(3, 4, &mut rng);
        let (b, h, w) = (2, 5, 7);
        let x = random_vec(&mut rng, b * 3 * h * w);
        let fast = conv.forward(&x, b, h, w);
        let slow = naive_conv(&conv, &x, b, h, w);
        assert!(max_rel_err(&fast, &slow) < 1e-12);
    }

    #[test]
    fn identity_kernel_reproduces_channel() {
        let mut weight = vec![0.0; 2 * 9];
        weight[4] = 1.0; // output 0 <- input channel 0, centre tap
        let conv = Conv3x3::from_weight(2, 1, weight).unwrap();
        let mut rng = seeded(2);
        let x = random_vec(&mut rng, 2 * 6 * 9);
        let y = conv.forward(&x, 1, 6, 9);
        assert_eq!(&y[..], &x[..54]);
        assert_eq!(naive_conv(&conv, &x, 1, 6, 9), y);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = seeded(3);
        let conv = Conv3x3::<f64>::new(2, 3, &mut rng);
        let (b, h, w) = (2, 4, 5);
        let x = random_vec(&mut rng, b * 2 * h * w);
        let probe = random_vec(&mut rng, b * 3 * h * w);
        let loss = |c: &Conv3x3<f64>, x: &[f64]| -> f64 {
            c.forward(x, b, h, w).iter().zip(&probe).map(|(a, p)| a * p).sum()
        };
        let (dw, dx) = conv.backward(&x, &probe, b, h, w, true);
        let num_w = central_diff(&conv.weight, |wv| {
            let c = Conv3x3::from_weight(2, 3, wv.to_vec()).unwrap();
            loss(&c, &x)
        });
        let num_x = central_diff(&x, |xv| loss(&conv, xv));
        assert!(max_rel_err(&dw, &num_w) < 1e-6, "weight grad");
        assert!(max_rel_err(&dx.unwrap(), &num_x) < 1e-6, "input grad");
    }

    #[test]
    fn batchnorm_train_gradients_match_finite_differences() {
        let mut rng = seeded(4);
        let mut bn = BatchNorm::<f64>::new(3);
        bn.gamma = random_vec(&mut rng, 3);
        bn.beta = random_vec(&mut rng, 3);
        let (b, hw) = (3, 4);
        let x = random_vec(&mut rng, b * 3 * hw);
        let probe = random_vec(&mut rng, b * 3 * hw);
        let (_, cache) = bn.clone().forward_train(&x, b, hw);
        let (dx, dg, dbeta) = bn.backward(&probe, &cache, b, hw);
        let loss = |bn: &BatchNorm<f64>, x: &[f64]| -> f64 {
            let (y, _) = bn.clone().forward_train(x, b, hw);
            y.iter().zip(&probe).map(|(a, p)| a * p).sum()
        };
        let num_x = central_diff(&x, |xv| loss(&bn, xv));
        let num_g = central_diff(&bn.gamma, |g| {
            let mut t = bn.clone();
            t.gamma = g.to_vec();
            loss(&t, &x)
        });
        let num_b = central_diff(&bn.beta, |g| {
            let mut t = bn.clone();
            t.beta = g.to_vec();
            loss(&t, &x)
        });
        assert!(max_rel_err(&dx, &num_x) < 1e-4);
        assert!(max_rel_err(&dg, &num_g) < 1e-6);
        assert!(max_rel_err(&dbeta, &num_b) < 1e-6);
    }

    #[test]
    fn batchnorm_inference_gradients_and_purity() {
        let mut rng = seeded(5);
        let mut bn = BatchNorm::<f64>::new(2);
        bn.running_mean = vec![0.3, -0.2];
        bn.running_var = vec![0.5, 2.0];
        bn.gamma = vec![1.5, -0.7];
        let x = random_vec(&mut rng, 2 * 2 * 3);
        let probe = random_vec(&mut rng, x.len());
        let before = bn.clone();
        let (_, cache) = bn.forward_inference(&x, 2, 3);
        assert_eq!(bn, before, "inference forward must not mutate");
        let (dx, _, _) = bn.backward(&probe, &cache, 2, 3);
        let num_x = central_diff(&x, |xv| {
            bn.forward_inference(xv, 2, 3).0.iter().zip(&probe).map(|(a, p)| a * p).sum()
        });
        assert!(max_rel_err(&dx, &num_x) < 1e-6);
    }

    #[test]
    fn batchnorm_updates_running_stats_with_momentum() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = [1.0, 3.0]; // mean 2, unbiased var 2
        bn.forward_train(&x, 2, 1);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn max_pool_drops_odd_edge_and_routes_gradient() {
        let x: Vec<f64> = (0..15).map(|v| v as f64).collect(); // 3×5 plane
        let (y, arg) = max_pool_2x2(&x, 1, 3, 5);
        assert_eq!(y, vec![6.0, 8.0]);
        let dx = max_pool_2x2_backward(&[1.0, 2.0], &arg, 1, 3, 5);
        assert_eq!(dx[6], 1.0);
        assert_eq!(dx[8], 2.0);
        assert_eq!(dx.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn max_pool_gradient_matches_finite_differences() {
        let mut rng = seeded(6);
        let x = random_vec(&mut rng, 2 * 4 * 6);
        let probe = random_vec(&mut rng, 2 * 2 * 3);
        let (_, arg) = max_pool_2x2(&x, 2, 4, 6);
        let dx = max_pool_2x2_backward(&probe, &arg, 2, 4, 6);
        let num = central_diff(&x, |xv| max_pool_2x2(xv, 2, 4, 6).0.iter().zip(&probe).map(|(a, p)| a * p).sum());
        assert!(max_rel_err(&dx, &num) < 1e-6);
    }

    #[test]
    fn fused_pool_equals_composition() {
        let mut rng = seeded(9);
        let mut bn = BatchNorm::<f64>::new(2);
        bn.gamma = vec![0.7, -1.3];
        bn.beta = vec![0.1, 0.2];
        let xhat = random_vec(&mut rng, 2 * 2 * 5 * 7);
        let act: Vec<f64> =
            xhat.chunks_exact(35).enumerate().flat_map(|(p, c)| c.iter().map(move |&v| (p, v))).map(|(p, v)| bn.affine(p, v).max(0.0)).collect();
        let (expected, earg) = max_pool_2x2(&act, 4, 5, 7);
        let (got, garg) = bn_relu_max_pool(&bn, &xhat, 4, 5, 7);
        assert_eq!(got, expected);
        assert_eq!(garg, earg);
    }

    #[test]
    fn global_avg_pool_gradient_matches_finite_differences() {
        let mut rng = seeded(7);
        let x = random_vec(&mut rng, 3 * 5);
        let probe = random_vec(&mut rng, 3);
        let dx = global_avg_pool_backward(&probe, 5);
        let num = central_diff(&x, |xv| global_avg_pool(xv, 3, 5).iter().zip(&probe).map(|(a, p)| a * p).sum());
        assert!(max_rel_err(&dx, &num) < 1e-6);
    }

    #[test]
    fn classifier_gradients_match_finite_differences() {
        let mut rng = seeded(8);
        let head = Classifier::<f64>::new(4, 3, &mut rng).unwrap();
        let z = random_vec(&mut rng, 2 * 4);
        let probe = random_vec(&mut rng, 2 * 3);
        let (g, dz) = head.backward(&z, &probe, 2);
        let loss = |h: &Classifier<f64>, z: &[f64]| -> f64 { h.forward(z, 2).iter().zip(&probe).map(|(a, p)| a * p).sum() };
        let num_w = central_diff(&head.weight, |wv| {
            let mut h = head.clone();
            h.weight = wv.to_vec();
            loss(&h, &z)
        });
        let num_b = central_diff(&head.bias, |bv| {
            let mut h = head.clone();
            h.bias = bv.to_vec();
            loss(&h, &z)
        });
        let num_z = central_diff(&z, |zv| loss(&head, zv));
        assert!(max_rel_err(&g.weight, &num_w) < 1e-6);
        assert!(max_rel_err(&g.bias, &num_b) < 1e-6);
        assert!(max_rel_err(&dz, &num_z) < 1e-6);
    }

    #[test]
    fn classifier_rejects_single_class() {
        assert!(matches!(Classifier::<f32>::new(64, 1, &mut seeded(0)), Err(NnError::TooFewClasses(1))));
    }
}
