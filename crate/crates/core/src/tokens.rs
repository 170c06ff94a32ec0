//! Token streams: raw little-endian `u32` ids with no header.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub fn encode(ids: &[u32]) -> Vec<u8> {
    ids.iter().flat_map(|id| id.to_le_bytes()).collect()
}

pub fn decode(bytes: &[u8]) -> Result<Vec<u32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!(
            "token stream of {} bytes is not a whole number of u32 ids",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_stream(path: impl AsRef<Path>, ids: &[u32]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(ids)).map_err(|e| Error::io(path, e))
}

/// Uniform random ids in `0..vocab_size`.
pub fn random_stream(vocab_size: usize, len: usize, rng: &mut Rng) -> Vec<u32> {
    (0..len).map(|_| rng.below(vocab_size) as u32).collect()
}
