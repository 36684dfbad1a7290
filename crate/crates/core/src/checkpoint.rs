//! Model checkpoint files.
//!
//! Layout:
//!
//! ```text
//! STHCSS1\n
//! key=value\n            model config and run metadata, one pair per line
//! ...
//! \n                     blank line ends the header
//! u32 count              number of parameter records (little endian)
//! record*:
//!   u32 name_len, name bytes (UTF-8)
//!   u32 rank, u64 dims[rank]
//!   f64 values[product(dims)], row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams, Param};
use crate::tensor::Tensor;

pub const MAGIC: &str = "STHCSS1";

/// A model plus free-form run metadata (target column, split ratios, ...).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub metadata: BTreeMap<String, String>,
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    let config_pairs = ckpt.model.config.to_pairs();
    for (k, v) in &config_pairs {
        out.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    for (k, v) in &ckpt.metadata {
        if config_pairs.iter().any(|(ck, _)| ck == k) {
            return Err(Error::InvalidArgument(format!(
                "metadata key {k:?} collides with a model config key"
            )));
        }
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::InvalidArgument(format!(
                "metadata pair {k:?}={v:?} cannot be stored in a header line"
            )));
        }
        out.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    out.push(b'\n');

    out.extend_from_slice(&(ckpt.model.params.len() as u32).to_le_bytes());
    for p in ckpt.model.params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("checkpoint header is not terminated".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
        self.pos += nl + 1;
        Ok(line)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r
        .line()
        .map_err(|_| Error::Format("missing checkpoint magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:?} (expected {MAGIC:?})"
        )));
    }
    let mut header = BTreeMap::new();
    loop {
        let line = r.line()?;
        if line.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
        header.insert(k.to_string(), v.to_string());
    }
    let config = ModelConfig::from_pairs(&header)?;
    let config_keys: Vec<&str> = config.to_pairs().iter().map(|(k, _)| *k).collect();
    let metadata = header
        .into_iter()
        .filter(|(k, _)| !config_keys.contains(&k.as_str()))
        .collect();

    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("parameter {name} has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("parameter {name} is too large")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
        params.push(Param { name, value });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after parameter records".into()));
    }
    let model = Model::from_params(config, ModelParams::from_params(params))
        .map_err(|e| Error::Format(format!("checkpoint does not match its config: {e}")))?;
    Ok(Checkpoint { model, metadata })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ckpt)?;
    fs::write(path, bytes).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    decode(&bytes)
}
