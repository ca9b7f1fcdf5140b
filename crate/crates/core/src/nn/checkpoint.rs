//! `SWNN` checkpoint files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "SWNN" | version | rows | cols | input_channels | embedding_dim | classes | mode
//! blob_count | { len | len × f32 } ...
//! ```
//!
//! Blobs follow declaration order: for each conv block the kernel, BN γ, BN β,
//! running mean, running variance; then classifier weight and bias. `mode` is
//! 0 for train and 1 for inference.

use std::io::{Read, Write};

use crate::scalar::Real;

use super::layers::{BatchNorm, Classifier, Conv3x3};
use super::network::{ConvBlock, EmbeddingNet, EMBEDDING_DIM, INPUT_CHANNELS};
use super::{Mode, NnError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SWNN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Embedding network plus classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub net: EmbeddingNet<T>,
    pub head: Classifier<T>,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn put_blob<T: Real, W: Write>(w: &mut W, blob: &[T]) -> std::io::Result<()> {
    put_u32(w, blob.len() as u32)?;
    let mut bytes = Vec::with_capacity(blob.len() * 4);
    for v in blob {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&bytes)
}

fn get_blob<T: Real, R: Read>(r: &mut R, expected: usize, what: &str) -> Result<Vec<T>, NnError> {
    let len = get_u32(r)? as usize;
    if len != expected {
        return Err(NnError::Checkpoint(format!("{what}: blob length {len}, expected {expected}")));
    }
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect())
}

pub fn write_checkpoint<T: Real, W: Write>(w: &mut W, net: &EmbeddingNet<T>, head: &Classifier<T>) -> Result<(), NnError> {
    let (rows, cols) = net.input_shape();
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [
        CHECKPOINT_VERSION,
        rows as u32,
        cols as u32,
        INPUT_CHANNELS as u32,
        EMBEDDING_DIM as u32,
        head.classes as u32,
        match net.mode() {
            Mode::Train => 0,
            Mode::Inference => 1,
        },
    ] {
        put_u32(w, v)?;
    }
    let blobs = net.state_blobs();
    put_u32(w, (blobs.len() + 2) as u32)?;
    for blob in blobs {
        put_blob(w, blob)?;
    }
    put_blob(w, &head.weight)?;
    put_blob(w, &head.bias)?;
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(r: &mut R) -> Result<Checkpoint<T>, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let rows = get_u32(r)? as usize;
    let cols = get_u32(r)? as usize;
    let channels = get_u32(r)? as usize;
    let dim = get_u32(r)? as usize;
    let classes = get_u32(r)? as usize;
    let mode = match get_u32(r)? {
        0 => Mode::Train,
        1 => Mode::Inference,
        m => return Err(NnError::Checkpoint(format!("unknown mode {m}"))),
    };
    if channels != INPUT_CHANNELS || dim != EMBEDDING_DIM {
        return Err(NnError::Checkpoint(format!("architecture {channels} channels / {dim}-d not supported")));
    }
    if classes < 2 {
        return Err(NnError::TooFewClasses(classes));
    }
    let count = get_u32(r)? as usize;
    if count != 4 * 5 + 2 {
        return Err(NnError::Checkpoint(format!("expected 22 blobs, found {count}")));
    }
    let mut blocks = Vec::with_capacity(4);
    for i in 0..4 {
        let cin = if i == 0 { INPUT_CHANNELS } else { EMBEDDING_DIM };
        let weight = get_blob(r, cin * EMBEDDING_DIM * 9, "conv kernel")?;
        let mut bn = BatchNorm::new(EMBEDDING_DIM);
        bn.gamma = get_blob(r, EMBEDDING_DIM, "bn gamma")?;
        bn.beta = get_blob(r, EMBEDDING_DIM, "bn beta")?;
        bn.running_mean = get_blob(r, EMBEDDING_DIM, "bn running mean")?;
        bn.running_var = get_blob(r, EMBEDDING_DIM, "bn running variance")?;
        if bn.running_var.iter().any(|&v| v <= T::zero()) {
            return Err(NnError::Checkpoint("non-positive running variance".into()));
        }
        blocks.push(ConvBlock { conv: Conv3x3::from_weight(cin, EMBEDDING_DIM, weight)?, bn });
    }
    let net = EmbeddingNet::from_blocks(rows, cols, blocks, mode)?;
    let head = Classifier {
        in_dim: EMBEDDING_DIM,
        classes,
        weight: get_blob(r, EMBEDDING_DIM * classes, "classifier weight")?,
        bias: get_blob(r, classes, "classifier bias")?,
    };
    Ok(Checkpoint { net, head })
}
