//! The `.smoe` checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SMOE"
//! 4       4     format version, u32 LE (currently 1)
//! 8       8     header length H, u64 LE
//! 16      H     JSON header {"config": ModelConfig, "tensors": [entry...]}
//! ...           zero padding up to the next multiple of 64 = data start
//! ...           tensor payloads, little-endian f32, each starting on a
//!               64-byte boundary relative to data start
//! end-32  32    SHA-256 of every preceding byte
//! ```
//!
//! A directory entry is `{"name", "shape", "dtype": "f32", "offset",
//! "length"}` with `offset` relative to the data start and `length` in
//! bytes. The footer digest doubles as the model hash that traces record.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    Attention, Block, ExpertWeights, FeedForward, LayerNorm, Linear, ModelConfig, MoeLayer,
    RouterWeights, SmoeCheckpoint,
};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"SMOE";
pub const VERSION: u32 = 1;
const ALIGN: usize = 64;
const DIGEST_LEN: usize = 32;

/// 32-byte SHA-256 content digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

struct Tensor<'a> {
    name: String,
    shape: Vec<usize>,
    data: &'a [f64],
}

fn push_linear<'a>(out: &mut Vec<Tensor<'a>>, prefix: &str, lin: &'a Linear) {
    out.push(Tensor {
        name: format!("{prefix}.weight"),
        shape: vec![lin.w.rows(), lin.w.cols()],
        data: lin.w.as_slice(),
    });
    out.push(Tensor {
        name: format!("{prefix}.bias"),
        shape: vec![lin.b.len()],
        data: &lin.b,
    });
}

fn push_ln<'a>(out: &mut Vec<Tensor<'a>>, prefix: &str, ln: &'a LayerNorm) {
    out.push(Tensor {
        name: format!("{prefix}.gamma"),
        shape: vec![ln.gamma.len()],
        data: &ln.gamma,
    });
    out.push(Tensor {
        name: format!("{prefix}.beta"),
        shape: vec![ln.beta.len()],
        data: &ln.beta,
    });
}

fn push_expert<'a>(out: &mut Vec<Tensor<'a>>, prefix: &str, e: &'a ExpertWeights) {
    out.push(Tensor {
        name: format!("{prefix}.w_in"),
        shape: vec![e.w_in.rows(), e.w_in.cols()],
        data: e.w_in.as_slice(),
    });
    out.push(Tensor {
        name: format!("{prefix}.b_in"),
        shape: vec![e.b_in.len()],
        data: &e.b_in,
    });
    out.push(Tensor {
        name: format!("{prefix}.w_out"),
        shape: vec![e.w_out.rows(), e.w_out.cols()],
        data: e.w_out.as_slice(),
    });
    out.push(Tensor {
        name: format!("{prefix}.b_out"),
        shape: vec![e.b_out.len()],
        data: &e.b_out,
    });
}

fn tensors(ckpt: &SmoeCheckpoint) -> Vec<Tensor<'_>> {
    let mut out = Vec::new();
    let m = &ckpt.token_embedding;
    out.push(Tensor {
        name: "token_embedding".into(),
        shape: vec![m.rows(), m.cols()],
        data: m.as_slice(),
    });
    let m = &ckpt.position_embedding;
    out.push(Tensor {
        name: "position_embedding".into(),
        shape: vec![m.rows(), m.cols()],
        data: m.as_slice(),
    });
    for (l, b) in ckpt.blocks.iter().enumerate() {
        let p = format!("blocks.{l}");
        push_ln(&mut out, &format!("{p}.ln1"), &b.ln1);
        push_linear(&mut out, &format!("{p}.attn.q"), &b.attn.q);
        push_linear(&mut out, &format!("{p}.attn.k"), &b.attn.k);
        push_linear(&mut out, &format!("{p}.attn.v"), &b.attn.v);
        push_linear(&mut out, &format!("{p}.attn.o"), &b.attn.o);
        push_ln(&mut out, &format!("{p}.ln2"), &b.ln2);
        match &b.ffn {
            FeedForward::Dense(e) => push_expert(&mut out, &format!("{p}.ffn"), e),
            FeedForward::Moe(moe) => {
                let w = &moe.router.w;
                out.push(Tensor {
                    name: format!("{p}.router.weight"),
                    shape: vec![w.rows(), w.cols()],
                    data: w.as_slice(),
                });
                for (j, e) in moe.experts.iter().enumerate() {
                    push_expert(&mut out, &format!("{p}.experts.{j}"), e);
                }
            }
        }
    }
    push_ln(&mut out, "ln_f", &ckpt.ln_f);
    out
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Serialized bytes of `ckpt`, footer included.
pub fn to_bytes(ckpt: &SmoeCheckpoint) -> Result<Vec<u8>> {
    ckpt.validate()?;
    let list = tensors(ckpt);
    let mut entries = Vec::with_capacity(list.len());
    let mut offset = 0usize;
    for t in &list {
        let length = t.data.len() * 4;
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: "f32".into(),
            offset: offset as u64,
            length: length as u64,
        });
        offset = align_up(offset + length);
    }
    let header = serde_json::to_vec(&Header {
        config: ckpt.config.clone(),
        tensors: entries,
    })
    .expect("header serializes");

    let data_start = align_up(16 + header.len());
    let mut bytes = Vec::with_capacity(data_start + offset + DIGEST_LEN);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.resize(data_start, 0);
    for t in &list {
        for v in t.data {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        bytes.resize(data_start + align_up(bytes.len() - data_start), 0);
    }
    let digest = Digest::of(&bytes);
    bytes.extend_from_slice(&digest.0);
    Ok(bytes)
}

/// Digest the checkpoint would carry on disk.
pub fn content_digest(ckpt: &SmoeCheckpoint) -> Result<Digest> {
    let bytes = to_bytes(ckpt)?;
    let mut d = [0u8; 32];
    d.copy_from_slice(&bytes[bytes.len() - DIGEST_LEN..]);
    Ok(Digest(d))
}

pub fn save(ckpt: &SmoeCheckpoint, path: impl AsRef<Path>) -> Result<Digest> {
    let path = path.as_ref();
    let bytes = to_bytes(ckpt)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let mut d = [0u8; 32];
    d.copy_from_slice(&bytes[bytes.len() - DIGEST_LEN..]);
    Ok(Digest(d))
}

pub fn load(path: impl AsRef<Path>) -> Result<SmoeCheckpoint> {
    load_with_digest(path).map(|(c, _)| c)
}

pub fn load_with_digest(path: impl AsRef<Path>) -> Result<(SmoeCheckpoint, Digest)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Bounds(m) => Error::Bounds(format!("{}: {m}", path.display())),
        Error::Corruption(m) => Error::Corruption(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<(SmoeCheckpoint, Digest)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    if bytes.len() < 16 + DIGEST_LEN {
        return Err(Error::Bounds(format!("file of {} bytes is truncated", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_end = bytes.len() - DIGEST_LEN;
    if header_len > body_end.saturating_sub(16) {
        return Err(Error::Bounds(format!(
            "header of {header_len} bytes overruns a {} byte file",
            bytes.len()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let data_start = align_up(16 + header_len);
    check_directory(&header.tensors, data_start, body_end)?;

    let digest = Digest::of(&bytes[..body_end]);
    if digest.0 != bytes[body_end..] {
        return Err(Error::Corruption("content digest mismatch".into()));
    }

    let mut map: HashMap<&str, (&TensorEntry, &[u8])> = HashMap::new();
    for e in &header.tensors {
        let start = data_start + e.offset as usize;
        map.insert(&e.name, (e, &bytes[start..start + e.length as usize]));
    }
    let ckpt = rebuild(header.config.clone(), &map)?;
    ckpt.validate()?;
    Ok((ckpt, digest))
}

fn check_directory(entries: &[TensorEntry], data_start: usize, body_end: usize) -> Result<()> {
    if data_start > body_end {
        return Err(Error::Bounds("tensor data starts past the end of file".into()));
    }
    let mut spans: Vec<(usize, usize, &str)> = Vec::with_capacity(entries.len());
    for e in entries {
        if e.dtype != "f32" {
            return Err(Error::Format(format!("tensor {} has dtype {}", e.name, e.dtype)));
        }
        let elems: usize = e.shape.iter().product();
        if e.length as usize != elems * 4 {
            return Err(Error::Format(format!(
                "tensor {} length {} does not match shape {:?}",
                e.name, e.length, e.shape
            )));
        }
        if !(e.offset as usize).is_multiple_of(ALIGN) {
            return Err(Error::Format(format!("tensor {} is not 64-byte aligned", e.name)));
        }
        let start = data_start
            .checked_add(e.offset as usize)
            .ok_or_else(|| Error::Bounds(format!("tensor {} offset overflows", e.name)))?;
        let end = start + e.length as usize;
        if end > body_end {
            return Err(Error::Bounds(format!(
                "tensor {} spans bytes {start}..{end} beyond payload end {body_end}",
                e.name
            )));
        }
        spans.push((start, end, &e.name));
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::Bounds(format!("tensors {} and {} overlap", w[0].2, w[1].2)));
        }
    }
    Ok(())
}

fn take(map: &HashMap<&str, (&TensorEntry, &[u8])>, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let (entry, raw) = map
        .get(name)
        .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
    if entry.shape != shape {
        return Err(Error::Format(format!(
            "tensor {name} has shape {:?}, expected {shape:?}",
            entry.shape
        )));
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("tensor {name} has non-finite values")));
    }
    Ok(values)
}

fn take_matrix(
    map: &HashMap<&str, (&TensorEntry, &[u8])>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Matrix> {
    Matrix::new(rows, cols, take(map, name, &[rows, cols])?)
}

fn rebuild(config: ModelConfig, map: &HashMap<&str, (&TensorEntry, &[u8])>) -> Result<SmoeCheckpoint> {
    config.validate()?;
    let d = config.d_model;
    let f = config.d_ff;
    let ln = |p: &str| -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: take(map, &format!("{p}.gamma"), &[d])?,
            beta: take(map, &format!("{p}.beta"), &[d])?,
        })
    };
    let lin = |p: &str| -> Result<Linear> {
        Ok(Linear {
            w: take_matrix(map, &format!("{p}.weight"), d, d)?,
            b: take(map, &format!("{p}.bias"), &[d])?,
        })
    };
    let expert = |p: &str| -> Result<ExpertWeights> {
        Ok(ExpertWeights {
            w_in: take_matrix(map, &format!("{p}.w_in"), f, d)?,
            b_in: take(map, &format!("{p}.b_in"), &[f])?,
            w_out: take_matrix(map, &format!("{p}.w_out"), d, f)?,
            b_out: take(map, &format!("{p}.b_out"), &[d])?,
        })
    };

    let mut blocks = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let p = format!("blocks.{l}");
        let ffn = if config.is_moe_layer(l) {
            let z = config.experts_in_layer(l);
            FeedForward::Moe(MoeLayer {
                router: RouterWeights {
                    w: take_matrix(map, &format!("{p}.router.weight"), d, z)?,
                },
                experts: (0..z)
                    .map(|j| expert(&format!("{p}.experts.{j}")))
                    .collect::<Result<_>>()?,
            })
        } else {
            FeedForward::Dense(expert(&format!("{p}.ffn"))?)
        };
        blocks.push(Block {
            ln1: ln(&format!("{p}.ln1"))?,
            attn: Attention {
                q: lin(&format!("{p}.attn.q"))?,
                k: lin(&format!("{p}.attn.k"))?,
                v: lin(&format!("{p}.attn.v"))?,
                o: lin(&format!("{p}.attn.o"))?,
            },
            ln2: ln(&format!("{p}.ln2"))?,
            ffn,
        });
    }
    Ok(SmoeCheckpoint {
        token_embedding: take_matrix(map, "token_embedding", config.vocab_size, d)?,
        position_embedding: take_matrix(map, "position_embedding", config.context_length, d)?,
        blocks,
        ln_f: ln("ln_f")?,
        config,
    })
}
