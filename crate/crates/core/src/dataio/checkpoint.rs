//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `AAE1`, then for each parameter in store
//! order: name length `u32`, UTF-8 name, rank `u32`, `rank` extents `u32`,
//! then the values as `f64`. The file ends after the last parameter.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::ParameterStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AAE1";

pub fn encode_checkpoint(store: &ParameterStore) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint {
                offset: self.pos,
                detail: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParameterStore> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            detail: format!("bad magic {:?}", String::from_utf8_lossy(magic)),
        });
    }
    let mut store = ParameterStore::new();
    while r.pos < bytes.len() {
        let start = r.pos;
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| Error::Checkpoint {
            offset: start + 4,
            detail: "parameter name is not UTF-8".into(),
        })?;
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32("extent")?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&c| c <= (bytes.len() - r.pos) / 8)
            .ok_or_else(|| Error::Checkpoint {
                offset: r.pos,
                detail: format!("truncated values for `{name}` with shape {shape:?}"),
            })?;
        let raw = r.take(count * 8, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data)?;
        store.insert(name, tensor).map_err(|_| Error::Checkpoint {
            offset: start,
            detail: format!("duplicate parameter `{name}`"),
        })?;
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParameterStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(store)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParameterStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
