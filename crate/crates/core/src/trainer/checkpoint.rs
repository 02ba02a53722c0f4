//! `PSCP` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PSCP" | u32 version | u64 seed | u32 len | spec JSON (len bytes)
//! u32 nparams, then per parameter:
//!   u32 len | name | u32 ndim | u64 dim * ndim | f64 * prod(dims)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::models::{Model, ModelSpec};
use crate::nn::Tensor;

use super::TrainError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PSCP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub model: Model,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint(model: &Model, seed: u64) -> Vec<u8> {
    let spec = serde_json::to_vec(model.spec()).expect("spec serializes");
    let mut out = Vec::with_capacity(64 + spec.len() + model.param_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(&seed.to_le_bytes());
    put_u32(&mut out, spec.len() as u32);
    out.extend_from_slice(&spec);
    put_u32(&mut out, model.params().len() as u32);
    for p in model.params() {
        put_u32(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.tensor.ndim() as u32);
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.tensor.data() {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| TrainError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(TrainError::Checkpoint("bad magic, not a PSCP file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Checkpoint(format!("unsupported version {version}")));
    }
    let seed = r.u64()?;
    let len = r.u32()? as usize;
    let spec: ModelSpec =
        serde_json::from_slice(r.take(len)?).map_err(|e| TrainError::Checkpoint(format!("spec: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| TrainError::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.filter(|n| n.checked_mul(8).is_some()).ok_or_else(|| TrainError::Checkpoint("shape overflow".into()))?;
        let data = r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(TrainError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { seed, model: Model::from_tensors(&spec, tensors)? })
}

pub fn save_checkpoint(model: &Model, seed: u64, path: &Path) -> Result<(), TrainError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| TrainError::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| TrainError::io(path, e))?;
    f.write_all(&encode_checkpoint(model, seed)).map_err(|e| TrainError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    decode_checkpoint(&fs::read(path).map_err(|e| TrainError::io(path, e))?)
}
