//! Model checkpoints.
//!
//! Little-endian container: the 8-byte magic `FS3DCKPT`, `u32` version,
//! `u64` length and UTF-8 text of the model configuration as TOML, `u32`
//! tensor count, then per tensor a `u32`-length-prefixed UTF-8 name, `u32`
//! rank, `u64` dimensions and the `f64` values. Tensors are the parameters,
//! the normalization running statistics (`<layer>.running_mean`,
//! `<layer>.running_var`) and any class shape priors (`prior.<class>`).

use std::collections::BTreeMap;
use std::path::Path;

use super::{Conditioning, ModelConfig, ReconstructionModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FS3DCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn tensors(model: &ReconstructionModel) -> Vec<(String, Vec<usize>, &[f64])> {
    let mut v: Vec<(String, Vec<usize>, &[f64])> = model
        .params()
        .into_iter()
        .map(|p| (p.name.clone(), p.shape.clone(), p.value.as_slice()))
        .collect();
    for (name, b) in model.buffers() {
        v.push((name, vec![b.len()], b));
    }
    if let Conditioning::AvgPrior { priors, .. } = &model.conditioning {
        let r = model.resolution();
        for (c, p) in priors.iter().enumerate() {
            if let Some(p) = p {
                v.push((format!("prior.{c}"), vec![r, r, r], p.as_slice()));
            }
        }
    }
    v
}

pub fn write_checkpoint(model: &ReconstructionModel) -> Result<Vec<u8>> {
    let config = toml::to_string(&model.config).map_err(|e| Error::Config(format!("serializing model config: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let ts = tensors(model);
    out.extend_from_slice(&(ts.len() as u32).to_le_bytes());
    for (name, shape, values) in ts {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos, format!("truncated checkpoint: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, v: u64) -> Result<usize> {
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::format(self.pos, format!("implausible length {v}")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ReconstructionModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format(0, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(8, format!("unsupported checkpoint version {version}")));
    }
    let n = r.u64()?;
    let n = r.len(n)?;
    let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::format(20, "config is not UTF-8"))?;
    let config: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
    let mut model = ReconstructionModel::new(&config)?;

    let count = r.u32()? as usize;
    let mut found = Tensors::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            let d = r.u64()?;
            shape.push(r.len(d)?);
        }
        let size: usize = shape.iter().product();
        let raw = r.take(size.checked_mul(8).ok_or_else(|| Error::format(at, "tensor too large"))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if found.insert(name.clone(), (shape, values)).is_some() {
            return Err(Error::format(at, format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, "trailing bytes after tensors"));
    }

    for p in model.params_mut() {
        p.value = take(&mut found, &p.name, &p.shape)?;
    }
    let norms = model.encoder.norms.iter_mut().chain(model.decoder.all_norms_mut());
    for n in norms {
        let base = n.gamma.name.trim_end_matches(".gamma").to_string();
        let c = n.running_mean.len();
        n.running_mean = take(&mut found, &format!("{base}.running_mean"), &[c])?;
        n.running_var = take(&mut found, &format!("{base}.running_var"), &[c])?;
    }
    let res = model.resolution();
    if let Conditioning::AvgPrior { priors, .. } = &mut model.conditioning {
        for (c, slot) in priors.iter_mut().enumerate() {
            let name = format!("prior.{c}");
            if found.contains_key(&name) {
                *slot = Some(take(&mut found, &name, &[res, res, res])?);
            }
        }
    }
    if let Some(extra) = found.keys().next() {
        return Err(Error::Data(format!("checkpoint has unexpected tensor `{extra}`")));
    }
    Ok(model)
}

type Tensors = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

fn take(found: &mut Tensors, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let (s, v) = found
        .remove(name)
        .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor `{name}`")))?;
    if s != shape {
        return Err(Error::Dimension(format!("tensor `{name}` has shape {s:?}, expected {shape:?}")));
    }
    Ok(v)
}

pub fn save_checkpoint(model: &ReconstructionModel, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<ReconstructionModel> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Data(format!("checkpoint not found: {}", path.display()))
        } else {
            Error::io(path.display().to_string(), e)
        }
    })?;
    read_checkpoint(&bytes)
}
