use serde::{Deserialize, Serialize};

use crate::scalar::Real;

use super::NnError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-blob first/second moments and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(blob_lens: &[usize]) -> Self {
        Self {
            m: blob_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: blob_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
            beta1: T::lit(ADAM_BETA1),
            beta2: T::lit(ADAM_BETA2),
            eps: T::lit(ADAM_EPS),
        }
    }
}

fn check_shapes<T>(params: &[&mut [T]], grads: &[&[T]], expected: Option<&[Vec<T>]>) -> Result<(), NnError> {
    let p: Vec<usize> = params.iter().map(|b| b.len()).collect();
    let g: Vec<usize> = grads.iter().map(|b| b.len()).collect();
    if p != g {
        return Err(NnError::ShapeMismatch { expected: p, actual: g });
    }
    if let Some(moments) = expected {
        let m: Vec<usize> = moments.iter().map(|b| b.len()).collect();
        if m != p {
            return Err(NnError::ShapeMismatch { expected: m, actual: p });
        }
    }
    Ok(())
}

/// Bias-corrected Adam update, in place.
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<(), NnError> {
    check_shapes(params, grads, Some(&state.m))?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// `p ← p − lr · g`.
pub fn plain_gd_step<T: Real>(params: &mut [&mut [T]], grads: &[&[T]], lr: T) -> Result<(), NnError> {
    check_shapes(params, grads, None)?;
    for (p, g) in params.iter_mut().zip(grads) {
        p.iter_mut().zip(g.iter()).for_each(|(p, g)| *p -= lr * *g);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    PlainGd,
}

/// Optimizer with its state, bound to one parameter layout.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Adam { state: AdamState<T>, lr: T },
    PlainGd { lr: T },
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, blob_lens: &[usize]) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam { state: AdamState::new(blob_lens), lr: T::lit(lr) },
            OptimizerKind::PlainGd => Optimizer::PlainGd { lr: T::lit(lr) },
        }
    }

    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<(), NnError> {
        match self {
            Optimizer::Adam { state, lr } => adam_step(params, grads, state, *lr),
            Optimizer::PlainGd { lr } => plain_gd_step(params, grads, *lr),
        }
    }
}
