//! Router-logit traces: the per-layer evidence every reduction method
//! consumes.
//!
//! On disk (`.smtr`, all integers little-endian):
//!
//! ```text
//! magic "SMTR" | version u32 | model hash [32] | layer count u32
//! per layer: layer id u32 | Z u32 | n_positions u64
//!            | n_positions*Z f32 logits (row-major, one row per position)
//!            | Z u64 selection counts | u64 drop count
//! ```

use std::io::Read;
use std::path::Path;

use rayon::prelude::*;

use crate::ckpt::{self, Digest};
use crate::error::{Error, Result};
use crate::model::{model_forward, Mode, SmoeCheckpoint};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"SMTR";
pub const VERSION: u32 = 1;
pub const DEFAULT_MAX_POSITIONS: usize = 65_536;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceLayer {
    pub layer: usize,
    /// `n_positions x Z` pre-softmax router logits.
    pub logits: Matrix,
    /// Tokens each expert processed (after capacity limits).
    pub counts: Vec<u64>,
    pub dropped: u64,
}

impl TraceLayer {
    pub fn n_experts(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouterTrace {
    pub model_hash: Digest,
    pub n_positions: u64,
    pub layers: Vec<TraceLayer>,
}

/// Normalized selection frequencies of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Frequencies {
    pub values: Vec<f64>,
    /// Every token was dropped; `values` fell back to uniform.
    pub degenerate: bool,
}

impl RouterTrace {
    pub fn layer(&self, layer: usize) -> Result<&TraceLayer> {
        self.layers
            .iter()
            .find(|l| l.layer == layer)
            .ok_or_else(|| Error::validation(format!("layer {layer} is not an MoE layer in this trace")))
    }

    pub fn layer_ids(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.layer).collect()
    }

    /// Errors unless the trace was harvested from exactly this checkpoint.
    pub fn check_model(&self, ckpt: &SmoeCheckpoint) -> Result<()> {
        let digest = ckpt::content_digest(ckpt)?;
        self.check_digest(&digest)
    }

    pub fn check_digest(&self, digest: &Digest) -> Result<()> {
        if *digest != self.model_hash {
            return Err(Error::HashMismatch {
                trace: self.model_hash.to_hex(),
                model: digest.to_hex(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.model_hash.0);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.layer as u32).to_le_bytes());
            out.extend_from_slice(&(l.n_experts() as u32).to_le_bytes());
            out.extend_from_slice(&(l.logits.rows() as u64).to_le_bytes());
            for v in l.logits.as_slice() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            for c in &l.counts {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&l.dropped.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a router trace (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let mut hash = [0u8; 32];
        read_exact(&mut r, &mut hash)?;
        let n_layers = read_u32(&mut r)? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        let mut n_positions = None;
        for _ in 0..n_layers {
            let layer = read_u32(&mut r)? as usize;
            let z = read_u32(&mut r)? as usize;
            let n = read_u64(&mut r)? as usize;
            let floats = n
                .checked_mul(z)
                .filter(|&f| f.saturating_mul(4) <= r.len())
                .ok_or_else(|| Error::Bounds(format!("layer {layer} logits overrun the trace")))?;
            let mut data = Vec::with_capacity(floats);
            for _ in 0..floats {
                let mut b = [0u8; 4];
                read_exact(&mut r, &mut b)?;
                data.push(f64::from(f32::from_le_bytes(b)));
            }
            let logits = Matrix::new(n, z, data)
                .map_err(|e| Error::Format(format!("layer {layer} logits: {e}")))?;
            let counts = (0..z).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
            let dropped = read_u64(&mut r)?;
            if *n_positions.get_or_insert(n) != n {
                return Err(Error::Format("layers disagree on the number of positions".into()));
            }
            if counts.iter().sum::<u64>() + dropped != n as u64 {
                return Err(Error::Format(format!(
                    "layer {layer}: counts plus drops do not equal {n} positions"
                )));
            }
            layers.push(TraceLayer {
                layer,
                logits,
                counts,
                dropped,
            });
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after trace", r.len())));
        }
        Ok(RouterTrace {
            model_hash: Digest(hash),
            n_positions: n_positions.unwrap_or(0) as u64,
            layers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Bounds("trace ends unexpectedly".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Selection counts of `layer` normalized to sum to one.
pub fn frequencies(trace: &RouterTrace, layer: usize) -> Result<Frequencies> {
    Ok(normalize_counts(&trace.layer(layer)?.counts))
}

pub fn normalize_counts(counts: &[u64]) -> Frequencies {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        let z = counts.len().max(1) as f64;
        return Frequencies {
            values: vec![1.0 / z; counts.len()],
            degenerate: true,
        };
    }
    Frequencies {
        values: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        degenerate: false,
    }
}

/// Runs eval-mode forward passes over the stream and records every MoE
/// layer's router logits and selection counts for exactly `max_positions`
/// token positions.
///
/// The stream is read cyclically in windows of `seq` tokens (the final
/// window may be shorter); windows of equal length are batched `batch` at a
/// time. Passes run in parallel and are concatenated in stream order.
pub fn harvest(
    ckpt: &SmoeCheckpoint,
    stream: &[u32],
    batch: usize,
    seq: usize,
    max_positions: usize,
) -> Result<RouterTrace> {
    if stream.is_empty() {
        return Err(Error::validation("empty token stream"));
    }
    if batch == 0 || seq == 0 {
        return Err(Error::validation("batch and seq must be positive"));
    }
    if max_positions < seq {
        return Err(Error::validation(format!(
            "max_positions {max_positions} is smaller than seq {seq}"
        )));
    }
    let model_hash = ckpt::content_digest(ckpt)?;

    let mut windows: Vec<Vec<u32>> = Vec::new();
    let mut cursor = 0usize;
    let mut remaining = max_positions;
    while remaining > 0 {
        let len = seq.min(remaining);
        windows.push((0..len).map(|i| stream[(cursor + i) % stream.len()]).collect());
        cursor = (cursor + len) % stream.len();
        remaining -= len;
    }
    let mut passes: Vec<&[Vec<u32>]> = Vec::new();
    let full = windows.iter().take_while(|w| w.len() == seq).count();
    passes.extend(windows[..full].chunks(batch));
    if full < windows.len() {
        passes.push(&windows[full..]);
    }

    let results = passes
        .par_iter()
        .map(|p| model_forward(ckpt, p, Mode::Eval).map(|(_, stats)| stats))
        .collect::<Result<Vec<_>>>()?;

    let mut layers: Vec<TraceLayer> = ckpt
        .config
        .moe_layers()
        .map(|(layer, z)| TraceLayer {
            layer,
            logits: Matrix::zeros(max_positions, z),
            counts: vec![0; z],
            dropped: 0,
        })
        .collect();
    let mut row = 0;
    for stats in &results {
        let n = stats.layers.first().map_or(0, |s| s.n_tokens());
        for (dst, src) in layers.iter_mut().zip(&stats.layers) {
            // Stored at the on-disk precision so a saved trace reloads equal.
            for t in 0..n {
                for (d, &v) in dst.logits.row_mut(row + t).iter_mut().zip(src.logits.row(t)) {
                    *d = f64::from(v as f32);
                }
            }
            for (c, d) in dst.counts.iter_mut().zip(&src.dispatch_counts) {
                *c += d;
            }
            dst.dropped += src.dropped;
        }
        row += n;
    }
    Ok(RouterTrace {
        model_hash,
        n_positions: max_positions as u64,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_normalization() {
        assert_eq!(normalize_counts(&[3, 1, 0, 0]).values, vec![0.75, 0.25, 0.0, 0.0]);
        let u = normalize_counts(&[5, 5, 5, 5]);
        assert_eq!(u.values, vec![0.25; 4]);
        assert!(!u.degenerate);
        let z = normalize_counts(&[0, 0]);
        assert!(z.degenerate);
        assert_eq!(z.values, vec![0.5, 0.5]);
    }

    #[test]
    fn truncated_trace_is_a_bounds_error() {
        let t = RouterTrace {
            model_hash: Digest([1; 32]),
            n_positions: 2,
            layers: vec![TraceLayer {
                layer: 0,
                logits: Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(),
                counts: vec![1, 1],
                dropped: 0,
            }],
        };
        let bytes = t.to_bytes();
        assert_eq!(RouterTrace::from_bytes(&bytes).unwrap(), t);
        assert!(matches!(
            RouterTrace::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Bounds(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'Q';
        assert!(matches!(RouterTrace::from_bytes(&bad), Err(Error::Format(_))));
    }
}
