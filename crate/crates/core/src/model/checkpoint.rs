use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{RngState, Tensor};

pub const MAGIC: &[u8; 9] = b"HITSRCKPT";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Named `f32` tensors plus run metadata. Integers are little-endian.
///
/// Layout: magic, version `u32`, config text (`u32` length + UTF-8),
/// step `u64`, rng block (`u8` flag; seed `u64`, stream `u64`, algorithm string, word
/// counter `u128`), tensor count `u32`, directory entries (name string,
/// dtype `u8`, rank `u32`, dims `u64`..., byte offset `u64` into the data
/// section), then the raw data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub step: u64,
    pub rng: Option<RngState>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config);
        out.extend_from_slice(&self.step.to_le_bytes());
        match &self.rng {
            Some(r) => {
                out.push(1);
                out.extend_from_slice(&r.seed.to_le_bytes());
                out.extend_from_slice(&r.stream.to_le_bytes());
                put_str(&mut out, &r.algorithm);
                out.extend_from_slice(&r.counter.to_le_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.numel() as u64;
        }
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, this build reads {VERSION}")));
        }
        let config = r.string()?;
        let step = r.u64()?;
        let rng = match r.take(1)?[0] {
            0 => None,
            1 => {
                let seed = r.u64()?;
                let stream = r.u64()?;
                let algorithm = r.string()?;
                let counter = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
                Some(RngState { seed, stream, algorithm, counter })
            }
            f => return Err(Error::Format(format!("bad rng flag {f}"))),
        };
        let count = r.u32()? as usize;
        let mut dir = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("tensor {name}: unsupported dtype code {dtype}")));
            }
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("tensor {name}: rank {rank} too large")));
            }
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            dir.push((name, dims, offset));
        }
        let data = &bytes[r.pos..];
        let mut tensors = Vec::with_capacity(dir.len());
        let mut expected = 0usize;
        for (name, dims, offset) in dir {
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = n
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format(format!("tensor {name}: size overflow")))?;
            if offset != expected {
                return Err(Error::Format(format!("tensor {name}: offset {offset}, expected {expected}")));
            }
            let end = offset.checked_add(len).filter(|&e| e <= data.len()).ok_or_else(|| {
                Error::Format(format!("truncated checkpoint: tensor {name} needs {len} bytes at {offset}"))
            })?;
            let vals = data[offset..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor::new(&dims, vals)?));
            expected = end;
        }
        if expected != data.len() {
            return Err(Error::Format(format!("{} trailing bytes after tensor data", data.len() - expected)));
        }
        Ok(Self { config, step, rng, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
                Error::Format(format!("truncated checkpoint: wanted {n} bytes at offset {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("string is not UTF-8".into()))
    }
}
