//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"GICP"
//! version u8 (currently 1)
//! sha256  32 bytes — hash of the embedded config JSON
//! cfg_len u32, followed by that many bytes of config JSON
//! dims    5 × u64: n_users, n_items, n_groups, d, layers
//! count   u32 tensors, each:
//!   name_len u16, name bytes (canonical tensor name)
//!   ndim     u8, ndim × u64 dimension sizes
//!   data     product(dims) × f64, little-endian
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GICP";
const VERSION: u8 = 1;

pub fn config_hash(config_json: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(config_json.as_bytes());
    hasher.finalize().into()
}

pub fn config_hash_hex(config_json: &str) -> String {
    config_hash(config_json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, config_json: &str) -> Result<()> {
    let dims = params.dims();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&config_hash(config_json));
    let cfg_bytes = config_json.as_bytes();
    buf.extend_from_slice(&(cfg_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg_bytes);
    for n in [dims.n_users, dims.n_items, dims.n_groups, dims.d, dims.layers] {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    let tensors = params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Load a checkpoint: the parameters and the embedded config JSON.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, String)> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader { buf: &buf, pos: 0, path };

    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let stored_hash: Vec<u8> = r.take(32)?.to_vec();
    let cfg_len = r.u32()? as usize;
    let config_json = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|_| Error::Checkpoint(format!("{}: config is not UTF-8", path.display())))?;
    if config_hash(&config_json) != stored_hash.as_slice() {
        return Err(Error::Checkpoint(format!(
            "{}: config hash mismatch",
            path.display()
        )));
    }
    let dims = ModelDims {
        n_users: r.u64()? as usize,
        n_items: r.u64()? as usize,
        n_groups: r.u64()? as usize,
        d: r.u64()? as usize,
        layers: r.u64()? as usize,
    };
    let count = r.u32()? as usize;

    let mut params = ModelParams::zeros(&dims);
    let expected: Vec<String> = params.tensors().iter().map(|(n, _)| n.clone()).collect();
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {count} tensors, expected {}",
            path.display(),
            expected.len()
        )));
    }
    let mut slots = params.tensors_mut();
    for (i, slot) in slots.iter_mut().enumerate() {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: bad tensor name", path.display())))?;
        if name != expected[i] {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {i} is {name:?}, expected {:?}",
                path.display(),
                expected[i]
            )));
        }
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        if shape != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {name} has shape {shape:?}, expected {:?}",
                path.display(),
                slot.shape()
            )));
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 8)?;
        let mut data = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        **slot = Tensor::from_vec(shape, data)?;
    }
    drop(slots);
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes",
            path.display(),
            buf.len() - r.pos
        )));
    }
    Ok((params, config_json))
}
